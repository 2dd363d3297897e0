"""Control-to-state maps: deform a template by a velocity field.

Two deformation models are provided:

``transport``
    Intensities are carried along the characteristics. Each cell centre is
    traced backwards in time and the template spline is sampled at the
    foot of the characteristic.

``continuity``
    Mass is carried along the characteristics (particle-in-cell). Each cell
    is split into box-shaped particles that move forwards in time; their
    mass is shared between the cells they overlap. With one particle per
    cell the weights are tents of support ``2h``.
    Mass pushed outside the domain is lost.

Both maps come with Jacobian-vector products and their transposes, which
is what the Gauss-Newton solver needs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import (
    BACKWARD,
    FORWARD,
    FlowTrace,
    VelocityField,
    flow_jacvec,
    flow_jacvec_transpose,
    integrate_characteristics,
)
from .grid import GridSpec, ScalarField, bspline_eval, bspline_fit, cell_centers

TRANSPORT = "transport"
CONTINUITY = "continuity"
KINDS = (TRANSPORT, CONTINUITY)

_DIRECTION = {TRANSPORT: BACKWARD, CONTINUITY: FORWARD}

# default sub-particles per axis and cell for the continuity model
PARTICLES_PER_AXIS = 2


def _check_grids(v: VelocityField, f0: ScalarField) -> None:
    if v.grid.n != f0.grid.n or v.grid.m != f0.grid.m:
        raise ValueError(
            f"velocity grid (n={v.grid.n}, m={v.grid.m}) does not match "
            f"template grid (n={f0.grid.n}, m={f0.grid.m})"
        )


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown deformation model {kind!r}; expected one of {KINDS}")


# -- particle-in-cell pushforward ------------------------------------------


@dataclass(frozen=True, eq=False)
class PushforwardWeights:
    """Sparse pushforward of particles onto grid cells.

    Row ``p`` lists the ``2**n`` cells particle ``p`` can overlap
    (``targets``), the fraction of its mass that lands in each of them
    (``weights``) and the derivative of those fractions with respect to the
    particle position (``dweights``). Entries for cells outside the domain
    carry zero weight.
    """

    grid: GridSpec
    targets: np.ndarray  # (P, 2**n)
    weights: np.ndarray  # (P, 2**n)
    dweights: np.ndarray  # (P, 2**n, n)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(
            self.targets.ravel(),
            weights=(self.weights * values[:, None]).ravel(),
            minlength=self.grid.size,
        )

    def apply_transpose(self, z: np.ndarray) -> np.ndarray:
        return np.einsum("pk,pk->p", self.weights, z[self.targets])

    def to_csr(self):
        """Pushforward matrix (targets by particles) as ``scipy.sparse.csr_matrix``."""
        from scipy import sparse

        P, K = self.targets.shape
        cols = np.repeat(np.arange(P), K)
        mat = sparse.coo_matrix(
            (self.weights.ravel(), (self.targets.ravel(), cols)), shape=(self.grid.size, P)
        )
        return mat.tocsr()


def particle_starts(grid: GridSpec, per_axis: int = 1) -> np.ndarray:
    """Centres of the ``per_axis**n`` equal sub-boxes of every cell, cell-major."""
    if per_axis < 1:
        raise ValueError("need at least one particle per axis")
    centres = cell_centers(grid)
    offsets = (np.arange(per_axis) + 0.5) / per_axis - 0.5
    sub = np.array(list(itertools.product(offsets, repeat=grid.n)))[:, ::-1] * grid.h
    return (centres[:, None, :] + sub[None, :, :]).reshape(-1, grid.n)


def pushforward_weights(grid: GridSpec, positions: np.ndarray, width: float = 1.0) -> PushforwardWeights:
    """Overlap fractions of box particles centred at ``positions`` with the grid cells.

    Each particle is an axis-aligned box of side ``width * h`` (``width <= 1``)
    and so overlaps at most two cells per axis. For ``width = 1`` the weight
    of a cell is the tent ``max(0, 1 - |x - c| / h)`` of support ``2h`` in the
    distance to its centre ``c``. Derivatives at kinks are right limits.
    """
    if not 0.0 < width <= 1.0:
        raise ValueError("particle width must lie in (0, 1] cells")
    n, m, h = grid.n, grid.m, grid.h
    positions = np.asarray(positions, dtype=float).reshape(-1, n)
    lo = positions / h - 0.5 * width  # left edges in cell units; cell j spans [j, j + 1]
    first = np.floor(lo).astype(np.int64)
    hi = lo + width
    spill = hi >= first + 1  # right edge reaches (or sits on) the next cell
    scale = 1.0 / width
    per_axis = []
    for d in range(n):
        j0 = first[:, d]
        w0 = (np.minimum(hi[:, d], j0 + 1) - lo[:, d]) * scale
        w1 = np.maximum(0.0, hi[:, d] - (j0 + 1)) * scale
        dw0 = np.where(spill[:, d], -scale / h, 0.0)
        dw1 = np.where(spill[:, d], scale / h, 0.0)
        cols = []
        for j, w, dw in ((j0, w0, dw0), (j0 + 1, w1, dw1)):
            valid = (j >= 0) & (j < m)
            cols.append((np.clip(j, 0, m - 1), w * valid, dw * valid))
        per_axis.append(cols)

    targets, weights, dweights = [], [], []
    for corner in itertools.product((0, 1), repeat=n):
        flat = np.zeros(len(positions), dtype=np.int64)
        stride = 1
        w1d, dw1d = [], []
        for d in range(n):
            j, w, dw = per_axis[d][corner[d]]
            flat += j * stride
            stride *= m
            w1d.append(w)
            dw1d.append(dw)
        targets.append(flat)
        weights.append(np.prod(w1d, axis=0))
        dcol = np.empty((len(positions), n))
        for d in range(n):
            g = dw1d[d]
            for e in range(n):
                if e != d:
                    g = g * w1d[e]
            dcol[:, d] = g
        dweights.append(dcol)
    return PushforwardWeights(
        grid, np.stack(targets, axis=1), np.stack(weights, axis=1), np.stack(dweights, axis=1)
    )


# -- linearised solution maps ----------------------------------------------


class SolutionMap:
    """Deformed template ``f(v)`` together with its linearisation at ``v``.

    Parameters
    ----------
    kind : {"transport", "continuity"}
    v : VelocityField
    f0 : ScalarField
        Template. For the transport model spline coefficients are computed
        on the fly when missing.
    n_steps : int
        Runge-Kutta steps for the characteristics.
    particles : int
        Continuity model only: every cell is split into ``particles**n``
        sub-box particles. More particles reduce the aliasing ripple of
        compressed regions; one particle per cell is plain cloud-in-cell.
    trace : FlowTrace, optional
        Precomputed characteristics (must start at the matching points).
    """

    def __init__(self, kind: str, v: VelocityField, f0: ScalarField, n_steps: int = 5,
                 trace: Optional[FlowTrace] = None, particles: int = PARTICLES_PER_AXIS):
        _check_kind(kind)
        _check_grids(v, f0)
        self.kind = kind
        self.grid = f0.grid
        per_axis = particles if kind == CONTINUITY else 1
        if trace is None:
            starts = particle_starts(f0.grid, per_axis)
            trace = integrate_characteristics(v, starts, _DIRECTION[kind], n_steps)
        elif trace.direction != _DIRECTION[kind]:
            raise ValueError(f"{kind} map needs characteristics traced "
                             f"{'backwards' if kind == TRANSPORT else 'forwards'} in time")
        elif len(trace.endpoints) != f0.grid.size * per_axis**f0.grid.n:
            raise ValueError("trace does not start at the particle positions of this map")
        self.trace = trace
        self.particles = per_axis
        if kind == TRANSPORT:
            if f0.coeffs is None:
                f0 = bspline_fit(f0)
            values, self._grads = bspline_eval(f0, trace.endpoints)
        else:
            sub = per_axis**f0.grid.n
            self._push = pushforward_weights(f0.grid, trace.endpoints, 1.0 / per_axis)
            self._mass = np.repeat(f0.samples / sub, sub)
            values = self._push.apply(self._mass)
        self.f0 = f0
        self.field = ScalarField(f0.grid, values)

    def jacvec(self, w) -> np.ndarray:
        dx = flow_jacvec(self.trace, w)
        return self.endpoint_jacvec(dx)

    def jacvec_transpose(self, z: np.ndarray) -> np.ndarray:
        return flow_jacvec_transpose(self.trace, self.endpoint_jacvec_transpose(z))

    def endpoint_jacvec(self, dx: np.ndarray) -> np.ndarray:
        """Field perturbation caused by moving the endpoints by ``dx``."""
        if self.kind == TRANSPORT:
            return np.einsum("pd,pd->p", self._grads, dx)
        push = self._push
        contrib = np.einsum("pkd,pd->pk", push.dweights, dx) * self._mass[:, None]
        return np.bincount(push.targets.ravel(), weights=contrib.ravel(), minlength=self.grid.size)

    def endpoint_jacvec_transpose(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.grid.size,):
            raise ValueError(f"cotangent must have length {self.grid.size}")
        if self.kind == TRANSPORT:
            return self._grads * z[:, None]
        push = self._push
        zt = z[push.targets]
        return np.einsum("pkd,pk->pd", push.dweights, zt) * self._mass[:, None]


def transport_apply(v: VelocityField, f0: ScalarField, n_steps: int = 5) -> ScalarField:
    """Template intensities transported along the flow of ``v`` for unit time."""
    return SolutionMap(TRANSPORT, v, f0, n_steps).field


def continuity_apply(v: VelocityField, f0: ScalarField, n_steps: int = 5,
                     particles: int = PARTICLES_PER_AXIS) -> ScalarField:
    """Template density pushed forward by the flow of ``v`` (mass preserving)."""
    return SolutionMap(CONTINUITY, v, f0, n_steps, particles=particles).field


def _from_trace(kind: str, trace: FlowTrace, f0: ScalarField) -> SolutionMap:
    _check_kind(kind)
    v = VelocityField.zeros(trace.grid, trace.m_t)
    per_axis = round((len(trace.endpoints) / f0.grid.size) ** (1.0 / f0.grid.n))
    return SolutionMap(kind, v, f0, trace.n_steps, trace=trace, particles=per_axis)


def solmap_jacvec(kind: str, trace: FlowTrace, f0: ScalarField, w) -> np.ndarray:
    return _from_trace(kind, trace, f0).jacvec(w)


def solmap_jacvec_transpose(kind: str, trace: FlowTrace, f0: ScalarField, z) -> np.ndarray:
    return _from_trace(kind, trace, f0).jacvec_transpose(z)
