"""Space-time velocity fields and their characteristic curves.

The velocity lives on the padded, cell-centred node grid of a
:class:`~tbir.grid.GridSpec` and on ``m_t + 1`` equispaced time planes.
Between nodes it is interpolated multilinearly; beyond the outermost nodes
it decays linearly to zero over one cell and is zero further out.

Characteristics are integrated with an explicit Runge-Kutta scheme. Every
stage keeps its interpolation stencil so that the derivative of the
endpoints with respect to the velocity unknowns (and its transpose) can be
applied without integrating again.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import ndimage

from .grid import GridSpec

FORWARD = 1
BACKWARD = -1

# Butcher tableaux (a, b, c) for the supported explicit schemes.
_SCHEMES = {
    "rk4": (
        np.array([[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]], dtype=float),
        np.array([1, 2, 2, 1], dtype=float) / 6.0,
        np.array([0, 0.5, 0.5, 1], dtype=float),
    ),
    "euler": (np.zeros((1, 1)), np.ones(1), np.zeros(1)),
}


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Velocity samples ``v`` on the padded node grid.

    ``dofs`` is ordered time plane first, then component, then space in
    lexicographic order (first coordinate fastest).
    """

    grid: GridSpec
    m_t: int
    dofs: np.ndarray

    def __post_init__(self):
        if self.m_t < 1:
            raise ValueError("need at least one time cell")
        dofs = np.ascontiguousarray(self.dofs, dtype=float).reshape(-1)
        if dofs.size != self.size_for(self.grid, self.m_t):
            raise ValueError(
                f"velocity vector has {dofs.size} entries, expected {self.size_for(self.grid, self.m_t)}"
            )
        if not np.all(np.isfinite(dofs)):
            raise ValueError("velocity contains non-finite values")
        dofs.setflags(write=False)
        object.__setattr__(self, "dofs", dofs)

    @staticmethod
    def size_for(grid: GridSpec, m_t: int) -> int:
        return (m_t + 1) * grid.n * grid.velocity_nodes**grid.n

    @classmethod
    def zeros(cls, grid: GridSpec, m_t: int = 1) -> "VelocityField":
        return cls(grid, m_t, np.zeros(cls.size_for(grid, m_t)))

    @classmethod
    def from_function(cls, grid: GridSpec, m_t: int, func) -> "VelocityField":
        """Sample ``func(t, pts) -> (P, n)`` at every node and time plane."""
        pts = velocity_nodes(grid)
        planes = [np.asarray(func(l / m_t, pts), dtype=float).T for l in range(m_t + 1)]
        return cls(grid, m_t, np.stack(planes).reshape(-1))

    @property
    def size(self) -> int:
        return self.dofs.size

    def planes(self) -> np.ndarray:
        """View of shape ``(m_t + 1, n, nodes**n)``."""
        return self.dofs.reshape(self.m_t + 1, self.grid.n, -1)

    def with_dofs(self, dofs: np.ndarray) -> "VelocityField":
        return VelocityField(self.grid, self.m_t, dofs)


def velocity_nodes(grid: GridSpec) -> np.ndarray:
    """Coordinates of the padded velocity nodes, shape ``(nodes**n, n)``."""
    axis = (np.arange(grid.velocity_nodes) - grid.pad + 0.5) * grid.h
    mesh = np.meshgrid(*([axis] * grid.n), indexing="ij")
    return np.stack([c.reshape(-1, order="F") for c in mesh], axis=1)


def _spatial_stencil(grid: GridSpec, pts: np.ndarray):
    """Multilinear stencil of ``pts`` on the velocity nodes.

    Returns flat node indices ``(P, 2**n)``, weights ``(P, 2**n)`` and weight
    gradients ``(P, 2**n, n)``. Nodes outside the grid get weight zero.
    """
    n, nodes, h = grid.n, grid.velocity_nodes, grid.h
    s = pts / h + grid.pad - 0.5
    # keep far-away points out of integer overflow; they get zero weight anyway
    s = np.clip(s, -2.0, nodes + 1.0)
    base = np.floor(s).astype(np.int64)
    t = s - base
    lo_w, hi_w = 1.0 - t, t
    idx_cols, w_cols, dw_cols = [], [], []
    for corner in itertools.product((0, 1), repeat=n):
        flat = np.zeros(len(pts), dtype=np.int64)
        valid = np.ones(len(pts), dtype=bool)
        w1d = []
        stride = 1
        for d in range(n):
            i = base[:, d] + corner[d]
            valid &= (i >= 0) & (i < nodes)
            flat += np.clip(i, 0, nodes - 1) * stride
            stride *= nodes
            w1d.append(hi_w[:, d] if corner[d] else lo_w[:, d])
        w = np.prod(w1d, axis=0) * valid
        dw = np.empty((len(pts), n))
        for d in range(n):
            g = np.full(len(pts), (1.0 if corner[d] else -1.0) / h)
            for e in range(n):
                if e != d:
                    g = g * w1d[e]
            dw[:, d] = g * valid
        idx_cols.append(flat)
        w_cols.append(w)
        dw_cols.append(dw)
    return np.stack(idx_cols, axis=1), np.stack(w_cols, axis=1), np.stack(dw_cols, axis=1)


def _time_weights(m_t: int, t: float):
    s = min(max(t, 0.0), 1.0) * m_t
    l0 = min(int(np.floor(s)), m_t - 1)
    a1 = s - l0
    return l0, 1.0 - a1, a1


@dataclass(frozen=True, eq=False)
class _Stage:
    """Interpolation record of one Runge-Kutta stage."""

    plane: int
    a0: float
    a1: float
    idx: np.ndarray
    w: np.ndarray
    jac: np.ndarray  # (P, n, n): d(velocity_c)/d(x_d) at the stage point

    def apply(self, planes: np.ndarray) -> np.ndarray:
        vt = self.a0 * planes[self.plane] + self.a1 * planes[self.plane + 1]
        return np.einsum("pk,cpk->pc", self.w, vt[:, self.idx])

    def scatter(self, z: np.ndarray, out: np.ndarray) -> None:
        nn = out.shape[-1]
        flat = self.idx.ravel()
        for c in range(z.shape[1]):
            acc = np.bincount(flat, weights=(self.w * z[:, c, None]).ravel(), minlength=nn)
            if self.a0:
                out[self.plane, c] += self.a0 * acc
            if self.a1:
                out[self.plane + 1, c] += self.a1 * acc


def _evaluate_stage(grid: GridSpec, m_t: int, planes: np.ndarray, t: float, pts: np.ndarray):
    l0, a0, a1 = _time_weights(m_t, t)
    idx, w, dw = _spatial_stencil(grid, pts)
    vt = a0 * planes[l0] + a1 * planes[l0 + 1]
    vals = vt[:, idx]  # (n, P, K)
    vel = np.einsum("pk,cpk->pc", w, vals)
    jac = np.einsum("pkd,cpk->pcd", dw, vals)
    return vel, _Stage(l0, a0, a1, idx, w, jac)


def interp_velocity(v: VelocityField, t: float, pts: np.ndarray) -> np.ndarray:
    """Velocity at time ``t`` and points ``pts`` (shape ``(P, n)``)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    pts = np.asarray(pts, dtype=float).reshape(-1, v.grid.n)
    vel, _ = _evaluate_stage(v.grid, v.m_t, v.planes(), t, pts)
    return vel


@dataclass(frozen=True, eq=False)
class FlowTrace:
    """Endpoints of the characteristics plus the per-stage records."""

    grid: GridSpec
    m_t: int
    start: np.ndarray
    endpoints: np.ndarray
    direction: int
    n_steps: int
    scheme: str
    stages: List[List[_Stage]] = field(repr=False)

    @property
    def dt(self) -> float:
        return self.direction / self.n_steps

    @property
    def n_dofs(self) -> int:
        return VelocityField.size_for(self.grid, self.m_t)


def integrate_characteristics(
    v: VelocityField,
    x0: np.ndarray,
    direction: int = FORWARD,
    n_steps: int = 5,
    scheme: str = "rk4",
) -> FlowTrace:
    """Integrate ``dx/dt = v(t, x)`` over the unit time interval.

    Forward integration runs from ``t = 0`` to ``t = 1``; backward from
    ``t = 1`` to ``t = 0`` (step ``-1 / n_steps``). Points that leave the
    padded grid see zero velocity and stop moving.
    """
    if n_steps < 1:
        raise ValueError("need at least one time step")
    if direction not in (FORWARD, BACKWARD):
        raise ValueError("direction must be +1 (forward) or -1 (backward)")
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    a, b, c = _SCHEMES[scheme]
    grid = v.grid
    planes = v.planes()
    x0 = np.asarray(x0, dtype=float).reshape(-1, grid.n)
    dt = direction / n_steps
    t = 0.0 if direction == FORWARD else 1.0
    x = x0.copy()
    records = []
    for _ in range(n_steps):
        ks, step_stages = [], []
        for i in range(len(b)):
            y = x.copy()
            for j in range(i):
                if a[i, j]:
                    y += dt * a[i, j] * ks[j]
            k, rec = _evaluate_stage(grid, v.m_t, planes, t + c[i] * dt, y)
            ks.append(k)
            step_stages.append(rec)
        for i in range(len(b)):
            x = x + dt * b[i] * ks[i]
        t += dt
        records.append(step_stages)
    x0 = x0.copy()
    x.setflags(write=False)
    x0.setflags(write=False)
    return FlowTrace(grid, v.m_t, x0, x, direction, n_steps, scheme, records)


def _as_planes(trace: FlowTrace, w) -> np.ndarray:
    w = w.dofs if isinstance(w, VelocityField) else np.asarray(w, dtype=float)
    if w.size != trace.n_dofs:
        raise ValueError(f"perturbation has {w.size} entries, expected {trace.n_dofs}")
    return w.reshape(trace.m_t + 1, trace.grid.n, -1)


def flow_jacvec(trace: FlowTrace, w) -> np.ndarray:
    """Directional derivative of the endpoints along the velocity change ``w``.

    Differentiates the discrete Runge-Kutta recursion exactly, including the
    dependence of each stage on the stage point.
    """
    a, b, _ = _SCHEMES[trace.scheme]
    wp = _as_planes(trace, w)
    dt = trace.dt
    dx = np.zeros_like(trace.endpoints)
    for step in trace.stages:
        dks = []
        for i, st in enumerate(step):
            dy = dx.copy()
            for j in range(i):
                if a[i, j]:
                    dy += dt * a[i, j] * dks[j]
            dks.append(st.apply(wp) + np.einsum("pcd,pd->pc", st.jac, dy))
        for i in range(len(b)):
            dx = dx + dt * b[i] * dks[i]
    return dx


def flow_jacvec_transpose(trace: FlowTrace, z: np.ndarray) -> np.ndarray:
    """Transpose of :func:`flow_jacvec`: endpoint cotangent to velocity cotangent."""
    a, b, _ = _SCHEMES[trace.scheme]
    z = np.asarray(z, dtype=float)
    if z.shape != trace.endpoints.shape:
        raise ValueError(f"cotangent has shape {z.shape}, expected {trace.endpoints.shape}")
    grid = trace.grid
    out = np.zeros((trace.m_t + 1, grid.n, grid.velocity_nodes**grid.n))
    dt = trace.dt
    zx = z.copy()
    for step in reversed(trace.stages):
        zk = [dt * bi * zx for bi in b]
        for i in reversed(range(len(step))):
            st = step[i]
            st.scatter(zk[i], out)
            zy = np.einsum("pcd,pc->pd", st.jac, zk[i])
            zx = zx + zy
            for j in range(i):
                if a[i, j]:
                    zk[j] = zk[j] + dt * a[i, j] * zy
    return out.reshape(-1)


def prolong_velocity(v: VelocityField, fine: GridSpec) -> VelocityField:
    """Multilinear upsampling of every time plane onto the nodes of ``fine``.

    Fine nodes beyond the outermost coarse node take the nearest boundary
    value, so constant fields stay constant.
    """
    coarse = v.grid
    if fine.n != coarse.n:
        raise ValueError("dimension mismatch")
    pts = velocity_nodes(fine)
    coords = (pts / coarse.h + coarse.pad - 0.5).T
    nodes = coarse.velocity_nodes
    out = np.empty((v.m_t + 1, coarse.n, len(pts)))
    for l, plane in enumerate(v.planes()):
        for c in range(coarse.n):
            arr = plane[c].reshape((nodes,) * coarse.n, order="F")
            out[l, c] = ndimage.map_coordinates(arr, coords, order=1, mode="nearest")
    return VelocityField(fine, v.m_t, out.reshape(-1))

