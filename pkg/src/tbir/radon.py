"""Parallel-beam Radon transform on cell-centred grids.

The projector is ray driven (Joseph style): every ray is sampled with step
``h`` and the image is bilinearly interpolated at the samples. The operator
is assembled per angle as a sparse matrix, so the adjoint is the exact
transpose. Three-dimensional volumes are handled slice by slice along the
third axis (rotation axis).

Geometries built for a pyramid level ``k`` measure line integrals in units
of the pixel size of that level, i.e. scaled by ``2**k``. This is what makes
the two-bin restriction ``(g_j + g_{j+1}) / 4`` consistent between levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .grid import GridSpec, ScalarField

DEFAULT_DETECTOR_LENGTH = math.sqrt(2.0)

# above this many non-zeros the operator is rebuilt per angle on every call
_CACHE_NNZ_LIMIT = 6_000_000


@dataclass(frozen=True)
class RadonGeometry:
    """Directions and detector sampling.

    Parameters
    ----------
    angles : tuple of float
        Projection directions in degrees, each in ``[0, 180)``.
    q : int
        Number of detector bins.
    L : float
        Detector length in domain units; bins are centred on the domain centre.
    level : int, optional
        Pyramid level the geometry was generated for. When set, line integrals
        are reported in pixel units of that level (multiplied by ``2**level``).
    """

    angles: Tuple[float, ...]
    q: int
    L: float = DEFAULT_DETECTOR_LENGTH
    level: Optional[int] = None

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(self.angles))
        object.__setattr__(self, "angles", angles)
        if not angles:
            raise ValueError("need at least one projection angle")
        if any(not 0.0 <= a < 180.0 for a in angles):
            raise ValueError("angles must lie in [0, 180) degrees")
        if self.q < 1:
            raise ValueError("need at least one detector bin")
        if self.L <= 0:
            raise ValueError("detector length must be positive")

    @property
    def p(self) -> int:
        return len(self.angles)

    @property
    def h_y(self) -> float:
        return self.L / self.q

    @property
    def scale(self) -> float:
        return float(2**self.level) if self.level is not None else 1.0

    def bin_centers(self) -> np.ndarray:
        """Signed detector offsets of the bin centres from the domain centre."""
        return (np.arange(self.q) + 0.5) * self.h_y - 0.5 * self.L


def detector_bins(k: int) -> int:
    q = 1.5 * 2**k
    if q != int(q):
        raise ValueError(f"1.5 * 2**{k} is not an integer")
    return int(q)


def geometry_for_level(angles: Sequence[float], k: int, L: float = DEFAULT_DETECTOR_LENGTH) -> RadonGeometry:
    """Geometry for a ``2**k`` image: ``q = 1.5 * 2**k`` bins over length ``L``."""
    if k < 1:
        raise ValueError(f"level must be at least 1, got {k}")
    return RadonGeometry(tuple(angles), detector_bins(k), L, k)


def level_of_bins(q: int) -> Optional[int]:
    """Inverse of :func:`detector_bins`, or ``None`` when ``q`` is not of that form."""
    k = round(math.log2(q / 1.5)) if q > 0 else 0
    return k if k >= 1 and detector_bins(k) == q else None


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Radon data, angle-major. 3D data carry one row per slice: ``(p, q, slices)``."""

    geometry: RadonGeometry
    samples: np.ndarray
    slices: int = 1

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float).reshape(-1)
        expected = self.geometry.p * self.geometry.q * self.slices
        if samples.size != expected:
            raise ValueError(f"sinogram has {samples.size} samples, expected {expected}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def as_array(self) -> np.ndarray:
        shape = (self.geometry.p, self.geometry.q)
        if self.slices > 1:
            shape += (self.slices,)
        return self.samples.reshape(shape)

    def with_samples(self, samples: np.ndarray) -> "Sinogram":
        return Sinogram(self.geometry, samples, self.slices)


def _angle_matrix(theta_deg: float, q: int, L: float, m: int, scale: float) -> sparse.csr_matrix:
    """Joseph projector for one direction as a ``(q, m*m)`` sparse matrix."""
    h = 1.0 / m
    theta = math.radians(theta_deg)
    normal = np.array([math.cos(theta), math.sin(theta)])
    along = np.array([-math.sin(theta), math.cos(theta)])
    half = 0.5 * math.sqrt(2.0) + h
    n_half = int(math.ceil(half / h))
    tau = np.arange(-n_half, n_half + 1) * h
    offsets = (np.arange(q) + 0.5) * (L / q) - 0.5 * L

    # sample points, (q, K, 2)
    pts = 0.5 + offsets[:, None, None] * normal + tau[None, :, None] * along
    u = pts / h - 0.5
    base = np.floor(u).astype(np.int64)
    t = u - base
    rows = np.broadcast_to(np.arange(q)[:, None], u.shape[:2])
    r_all, c_all, v_all = [], [], []
    for cx in (0, 1):
        ix = base[..., 0] + cx
        wx = t[..., 0] if cx else 1.0 - t[..., 0]
        for cy in (0, 1):
            iy = base[..., 1] + cy
            wy = t[..., 1] if cy else 1.0 - t[..., 1]
            keep = (ix >= 0) & (ix < m) & (iy >= 0) & (iy < m)
            w = (wx * wy)[keep]
            r_all.append(rows[keep])
            c_all.append(ix[keep] + m * iy[keep])
            v_all.append(w)
    data = np.concatenate(v_all) * (h * scale)
    mat = sparse.coo_matrix((data, (np.concatenate(r_all), np.concatenate(c_all))), shape=(q, m * m))
    return mat.tocsr()


@lru_cache(maxsize=16)
def _stacked_matrix(angles: Tuple[float, ...], q: int, L: float, m: int, scale: float):
    return sparse.vstack([_angle_matrix(a, q, L, m, scale) for a in angles], format="csr")


def _estimated_nnz(geom: RadonGeometry, m: int) -> int:
    return int(geom.p * geom.q * 2 * (0.75 * m) * 4)


class RadonOperator:
    """Linear map between 2D (or stacked 3D) fields and sinograms."""

    def __init__(self, geometry: RadonGeometry, grid: GridSpec):
        self.geometry = geometry
        self.grid = grid
        self.slices = grid.m if grid.n == 3 else 1
        self._key = (geometry.angles, geometry.q, geometry.L, grid.m, geometry.scale)
        self._cached = _estimated_nnz(geometry, grid.m) <= _CACHE_NNZ_LIMIT

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.geometry.p * self.geometry.q * self.slices, self.grid.size)

    def _blocks(self):
        if self._cached:
            yield slice(None), _stacked_matrix(*self._key)
            return
        q = self.geometry.q
        for i, a in enumerate(self.geometry.angles):
            yield slice(i * q, (i + 1) * q), _angle_matrix(a, *self._key[1:])

    def _slab(self, flat: np.ndarray) -> np.ndarray:
        # columns are slices; rows are 2D lexicographic pixel indices
        m = self.grid.m
        return flat.reshape(m * m, self.slices, order="F")

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.grid.size:
            raise ValueError("field does not match the operator grid")
        slab = self._slab(x)
        out = np.empty((self.geometry.p * self.geometry.q, self.slices))
        for rows, mat in self._blocks():
            out[rows] = mat @ slab
        return out.reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.shape[0]:
            raise ValueError("sinogram does not match the operator geometry")
        ys = y.reshape(self.geometry.p * self.geometry.q, self.slices)
        out = np.zeros((self.grid.m**2, self.slices))
        for rows, mat in self._blocks():
            out += mat.T @ ys[rows]
        return out.reshape(-1, order="F")


def radon_forward(f: ScalarField, geom: RadonGeometry) -> Sinogram:
    op = RadonOperator(geom, f.grid)
    return Sinogram(geom, op.forward(f.samples), op.slices)


def radon_adjoint(s: Sinogram, grid: GridSpec) -> ScalarField:
    op = RadonOperator(s.geometry, grid)
    if op.slices != s.slices:
        raise ValueError(f"sinogram has {s.slices} slices, grid needs {op.slices}")
    return ScalarField(grid, op.adjoint(s.samples))


def restrict_sinogram(s: Sinogram) -> Sinogram:
    """Sinogram of the next coarser pyramid level.

    Neighbouring bins are paired and combined as ``(g_j + g_{j+1}) / 4``:
    half from averaging, half from the doubled pixel size of the coarser
    level. Slices of 3D data are averaged pairwise.
    """
    geom = s.geometry
    if geom.q % 2:
        raise ValueError(f"cannot restrict a sinogram with an odd number of bins ({geom.q})")
    arr = s.samples.reshape(geom.p, geom.q // 2, 2, s.slices)
    coarse = (arr[:, :, 0] + arr[:, :, 1]) / 4.0
    slices = s.slices
    if slices > 1:
        if slices % 2:
            raise ValueError("cannot restrict an odd number of slices")
        coarse = coarse.reshape(geom.p, geom.q // 2, slices // 2, 2).mean(axis=3)
        slices //= 2
    level = geom.level - 1 if geom.level is not None else None
    if level is not None and detector_bins(level) != geom.q // 2:
        level = None
    new_geom = RadonGeometry(geom.angles, geom.q // 2, geom.L, level)
    return Sinogram(new_geom, coarse.reshape(-1), slices)


def _ramp_filter(rows: np.ndarray, h_y: float) -> np.ndarray:
    q = rows.shape[-1]
    size = max(64, int(2 ** math.ceil(math.log2(2 * q))))
    k = np.arange(size)
    k = np.where(k < size // 2, k, k - size)
    kernel = np.zeros(size)
    kernel[0] = 1.0 / (4.0 * h_y**2)
    odd = k % 2 == 1
    kernel[odd] = -1.0 / (math.pi * k[odd] * h_y) ** 2
    response = np.real(np.fft.fft(kernel)) * h_y
    spec = np.fft.fft(rows, n=size, axis=-1) * response
    return np.real(np.fft.ifft(spec, axis=-1))[..., :q]


def fbp(s: Sinogram, grid: GridSpec) -> ScalarField:
    """Filtered backprojection with a Ram-Lak filter."""
    geom = s.geometry
    arr = s.samples.reshape(geom.p, geom.q, s.slices)
    filtered = _ramp_filter(np.moveaxis(arr, 1, 2), geom.h_y)
    filtered = np.moveaxis(filtered, 2, 1).reshape(-1)
    back = radon_adjoint(s.with_samples(filtered), grid)
    # the transpose of the projector carries a factor h**2 / h_y per angle;
    # level data and the transpose each carry the pixel-unit scale once
    norm = (math.pi / geom.p) * geom.h_y / (grid.h**2 * geom.scale**2)
    return ScalarField(grid, back.samples * norm)

