"""Cell-centred image grids, cubic B-spline interpolation and image pyramids.

Images live on the unit square (or cube) split into ``m`` cells per axis.
Samples are stored as flat vectors in lexicographic order with the first
coordinate running fastest, so ``samples.reshape((m,) * n, order="F")``
yields an array indexed as ``arr[i1, i2, ...]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded


@dataclass(frozen=True)
class GridSpec:
    """Regular cell-centred discretisation of ``(0, 1)^n``.

    Parameters
    ----------
    n : int
        Spatial dimension, 2 or 3.
    m : int
        Cells per axis, a power of two.
    pad : int, optional
        Padding cells per side of the velocity grid. Defaults to
        ``max(4, m // 8)``.
    """

    n: int
    m: int
    pad: Optional[int] = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        if self.m < 1 or self.m & (self.m - 1):
            raise ValueError(f"cells per axis must be a power of two, got {self.m}")
        if self.pad is None:
            object.__setattr__(self, "pad", max(4, self.m // 8))
        if self.pad < 0:
            raise ValueError("padding must be non-negative")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def level(self) -> int:
        return self.m.bit_length() - 1

    @property
    def size(self) -> int:
        return self.m**self.n

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def velocity_nodes(self) -> int:
        """Nodes per axis of the padded velocity grid."""
        return self.m + 2 * self.pad

    def coarsen(self) -> "GridSpec":
        if self.m % 2:
            raise ValueError(f"cannot coarsen a grid with odd m={self.m}")
        return GridSpec(self.n, self.m // 2)

    def refine(self) -> "GridSpec":
        return GridSpec(self.n, self.m * 2)


def to_array(grid: GridSpec, flat: np.ndarray) -> np.ndarray:
    return np.asarray(flat).reshape(grid.shape, order="F")


def to_flat(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr).reshape(-1, order="F")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Image or density samples at the cell centres of ``grid``.

    ``coeffs`` holds the cubic B-spline coefficients once :func:`bspline_fit`
    has been applied.
    """

    grid: GridSpec
    samples: np.ndarray
    coeffs: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float).reshape(-1)
        if samples.size != self.grid.size:
            raise ValueError(
                f"expected {self.grid.size} samples for m={self.grid.m}, n={self.grid.n}, "
                f"got {samples.size}"
            )
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.coeffs is not None:
            coeffs = np.ascontiguousarray(self.coeffs, dtype=float).reshape(-1)
            if coeffs.size != samples.size:
                raise ValueError("coefficient vector has the wrong length")
            coeffs.setflags(write=False)
            object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_array(cls, arr: np.ndarray, grid: Optional[GridSpec] = None) -> "ScalarField":
        arr = np.asarray(arr, dtype=float)
        if grid is None:
            if len(set(arr.shape)) != 1:
                raise ValueError(f"array must be square/cubic, got shape {arr.shape}")
            grid = GridSpec(arr.ndim, arr.shape[0])
        return cls(grid, to_flat(arr))

    def as_array(self) -> np.ndarray:
        return to_array(self.grid, self.samples)

    def mass(self) -> float:
        return float(self.samples.sum() * self.grid.cell_volume)


def cell_centers(grid: GridSpec) -> np.ndarray:
    """Cell-centre coordinates, shape ``(m**n, n)``, first axis fastest."""
    axis = (np.arange(grid.m) + 0.5) * grid.h
    mesh = np.meshgrid(*([axis] * grid.n), indexing="ij")
    return np.stack([to_flat(c) for c in mesh], axis=1)


# -- cubic B-splines -------------------------------------------------------
#
# Coefficients sit at the cell centres. At each end the coefficient sequence
# is extended by two ghost values obtained by linear extrapolation, which makes
# the interpolant reproduce affine functions exactly (constants included).
# With this end condition the first and last interpolation equations reduce
# to c = f.

_GHOST = 2


def _banded_system(m: int) -> np.ndarray:
    ab = np.zeros((3, m))
    ab[0, 1:] = 1.0 / 6.0
    ab[1, :] = 4.0 / 6.0
    ab[2, :-1] = 1.0 / 6.0
    # boundary rows are the identity
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    return ab


def _solve_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    m = arr.shape[axis]
    if m < 2:
        return arr.copy()
    moved = np.moveaxis(arr, axis, 0)
    sol = solve_banded((1, 1), _banded_system(m), moved.reshape(m, -1))
    return np.moveaxis(sol.reshape(moved.shape), 0, axis)


def bspline_fit(f: ScalarField) -> ScalarField:
    """Return a copy of ``f`` carrying interpolating cubic B-spline coefficients."""
    if not np.all(np.isfinite(f.samples)):
        raise ValueError("cannot fit a spline to non-finite samples")
    if f.grid.m < 2:
        raise ValueError("spline interpolation needs at least two cells per axis")
    c = f.as_array()
    for axis in range(f.grid.n):
        c = _solve_axis(c, axis)
    return ScalarField(f.grid, f.samples, to_flat(c))


def _extend_coefficients(c: np.ndarray) -> np.ndarray:
    for axis in range(c.ndim):
        c = np.moveaxis(c, axis, 0)
        lo1 = 2 * c[0] - c[1]
        lo2 = 3 * c[0] - 2 * c[1]
        hi1 = 2 * c[-1] - c[-2]
        hi2 = 3 * c[-1] - 2 * c[-2]
        c = np.concatenate([lo2[None], lo1[None], c, hi1[None], hi2[None]], axis=0)
        c = np.moveaxis(c, 0, axis)
    return c


def _cubic_weights(t: np.ndarray):
    t2 = t * t
    t3 = t2 * t
    u = 1.0 - t
    w = np.stack(
        [u * u * u / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0, (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0],
        axis=-1,
    )
    dw = np.stack([-0.5 * u * u, 1.5 * t2 - 2 * t, -1.5 * t2 + t + 0.5, 0.5 * t2], axis=-1)
    return w, dw


def bspline_eval(f: ScalarField, pts: np.ndarray):
    """Evaluate the spline interpolant of ``f`` and its gradient at ``pts``.

    Parameters
    ----------
    f : ScalarField
        Field with spline coefficients (see :func:`bspline_fit`).
    pts : (P, n) array
        Evaluation points in domain coordinates.

    Returns
    -------
    values : (P,) array
    grads : (P, n) array
        Spatial gradient. Points outside the closed unit box give zero value
        and zero gradient.
    """
    if f.coeffs is None:
        raise ValueError("field has no spline coefficients; call bspline_fit first")
    grid = f.grid
    n, m, h = grid.n, grid.m, grid.h
    pts = np.asarray(pts, dtype=float).reshape(-1, n)
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)

    ext = _extend_coefficients(to_array(grid, f.coeffs))
    s = np.clip(pts / h - 0.5, -0.5, m - 0.5)
    base = np.floor(s)
    t = s - base
    first = base.astype(np.int64) - 1 + _GHOST

    weights, dweights, index = [], [], []
    for d in range(n):
        w, dw = _cubic_weights(t[:, d])
        weights.append(w)
        dweights.append(dw / h)
        index.append(first[:, d, None] + np.arange(4))

    vals = np.zeros(len(pts))
    grads = np.zeros((len(pts), n))
    for combo in itertools.product(range(4), repeat=n):
        c = ext[tuple(index[d][:, combo[d]] for d in range(n))]
        w = [weights[d][:, combo[d]] for d in range(n)]
        prod = np.prod(w, axis=0)
        vals += prod * c
        for d in range(n):
            g = dweights[d][:, combo[d]]
            for e in range(n):
                if e != d:
                    g = g * w[e]
            grads[:, d] += g * c
    vals[~inside] = 0.0
    grads[~inside] = 0.0
    return vals, grads


def restrict_image(f: ScalarField) -> ScalarField:
    """Block-mean restriction onto the grid with half as many cells per axis."""
    grid = f.grid
    if grid.m % 2:
        raise ValueError(f"cannot restrict a field with odd m={grid.m}")
    k = grid.m // 2
    arr = f.as_array().reshape(sum(((k, 2) for _ in range(grid.n)), ()))
    coarse = arr.mean(axis=tuple(range(1, 2 * grid.n, 2)))
    return ScalarField(grid.coarsen(), to_flat(coarse))
