"""Quadratic smoothness penalties on space-time velocity fields.

The penalty is ``R(v) = h_t h^n / 2 * (gs |B v|^2 + gt |d_t v|^2 + g0 |v|^2)``
with ``B`` one of

* ``diffusion``: forward differences along every axis (gradient),
* ``curvature``: the five/seven point Laplacian,
* ``third-order``: per-axis third differences,

all with zero Neumann conditions on the padded velocity grid. The operator
is assembled once as a sparse matrix and cached per configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .flow import VelocityField
from .grid import GridSpec

DIFFUSION = "diffusion"
CURVATURE = "curvature"
THIRD_ORDER = "third-order"
REG_KINDS = (DIFFUSION, CURVATURE, THIRD_ORDER)


@dataclass(frozen=True)
class RegConfig:
    kind: str
    gamma_s: float
    grid: GridSpec
    m_t: int = 1
    gamma_t: float = 0.0
    gamma_0: float = 1e-6

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ValueError(f"unknown regulariser {self.kind!r}; expected one of {REG_KINDS}")
        if min(self.gamma_s, self.gamma_t, self.gamma_0) < 0:
            raise ValueError("weights must be non-negative")
        if self.m_t < 1:
            raise ValueError("need at least one time cell")

    @property
    def h_t(self) -> float:
        return 1.0 / self.m_t

    @property
    def size(self) -> int:
        return VelocityField.size_for(self.grid, self.m_t)

    def on(self, grid: GridSpec) -> "RegConfig":
        """Same weights on a different grid."""
        return RegConfig(self.kind, self.gamma_s, grid, self.m_t, self.gamma_t, self.gamma_0)


def _diff1d(k: int, h: float) -> sparse.csr_matrix:
    """Forward differences, shape ``(k - 1, k)``."""
    return sparse.diags([-np.ones(k - 1), np.ones(k - 1)], [0, 1], shape=(k - 1, k), format="csr") / h


def _along_axis(op1d, axis: int, n: int, k: int):
    # lexicographic order with the first axis fastest: axis 0 is the innermost factor
    mats = [sparse.identity(k, format="csr")] * n
    mats[axis] = op1d
    out = mats[n - 1]
    for d in range(n - 2, -1, -1):
        out = sparse.kron(out, mats[d], format="csr")
    return out


def spatial_operator(kind: str, grid: GridSpec) -> sparse.csr_matrix:
    """Stacked difference operator ``B`` acting on one scalar node field."""
    k, h, n = grid.velocity_nodes, grid.h, grid.n
    d1 = _diff1d(k, h)
    lap1 = (d1.T @ d1).tocsr()  # negative 1D Neumann Laplacian
    if kind == DIFFUSION:
        blocks = [_along_axis(d1, a, n, k) for a in range(n)]
    elif kind == CURVATURE:
        blocks = [sum(_along_axis(lap1, a, n, k) for a in range(n))]
    elif kind == THIRD_ORDER:
        third = (d1 @ lap1).tocsr()
        blocks = [_along_axis(third, a, n, k) for a in range(n)]
    else:
        raise ValueError(f"unknown regulariser {kind!r}")
    return sparse.vstack(blocks, format="csr")


@lru_cache(maxsize=32)
def _operators(cfg: RegConfig):
    grid = cfg.grid
    b = spatial_operator(cfg.kind, grid)
    dt = _diff1d(cfg.m_t + 1, cfg.h_t)
    return b, dt


@lru_cache(maxsize=32)
def _hessian(cfg: RegConfig) -> sparse.csr_matrix:
    grid = cfg.grid
    nodes = grid.velocity_nodes**grid.n
    planes = cfg.m_t + 1
    scale = cfg.h_t * grid.h**grid.n
    b, dt = _operators(cfg)
    btb = (b.T @ b).tocsr()
    h = sparse.kron(sparse.identity(planes * grid.n), cfg.gamma_s * btb, format="csr")
    if cfg.gamma_t:
        dtt = (dt.T @ dt).tocsr()
        # planes are the slowest index, components next
        h = h + cfg.gamma_t * sparse.kron(dtt, sparse.identity(grid.n * nodes), format="csr")
    if cfg.gamma_0:
        h = h + cfg.gamma_0 * sparse.identity(planes * grid.n * nodes, format="csr")
    return (scale * h).tocsr()


def _vector(cfg: RegConfig, v) -> np.ndarray:
    if isinstance(v, VelocityField):
        if v.grid != cfg.grid or v.m_t != cfg.m_t:
            raise ValueError("velocity field does not match the regulariser configuration")
        return v.dofs
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != cfg.size:
        raise ValueError(f"vector has {v.size} entries, expected {cfg.size}")
    return v


def reg_eval(cfg: RegConfig, v):
    """Return ``(R(v), grad R(v))``."""
    x = _vector(cfg, v)
    b, dt = _operators(cfg)
    fields = x.reshape(cfg.m_t + 1, cfg.grid.n, -1)
    spatial = sum(float(np.sum((b @ f) ** 2)) for f in fields.reshape(-1, fields.shape[-1]))
    temporal = float(np.sum((dt @ fields.reshape(cfg.m_t + 1, -1)) ** 2))
    value = 0.5 * cfg.h_t * cfg.grid.h**cfg.grid.n * (
        cfg.gamma_s * spatial + cfg.gamma_t * temporal + cfg.gamma_0 * float(x @ x)
    )
    return value, _hessian(cfg) @ x


def reg_hessvec(cfg: RegConfig, w) -> np.ndarray:
    return _hessian(cfg) @ _vector(cfg, w)


def reg_diag(cfg: RegConfig, eps: float = 0.0) -> np.ndarray:
    return _hessian(cfg).diagonal() + eps


def reg_matrix(cfg: RegConfig) -> sparse.csr_matrix:
    return _hessian(cfg)


@lru_cache(maxsize=8)
def _factor(cfg: RegConfig, eps: float):
    shifted = (_hessian(cfg) + eps * sparse.identity(cfg.size, format="csr")).tocsc()
    return splu(shifted)


def reg_solver(cfg: RegConfig, eps: float = 0.0):
    """Return ``r -> (H_R + eps I)^{-1} r`` using a cached sparse LU factorisation."""
    lu = _factor(cfg, float(eps))
    return lu.solve
