"""Image quality scores."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import ScalarField

_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _local_stats(a: np.ndarray, b: np.ndarray):
    # truncate so the Gaussian kernel spans exactly 11 samples
    opts = dict(sigma=_SIGMA, truncate=(_WIN // 2) / _SIGMA, mode="reflect")
    mu_a = gaussian_filter(a, **opts)
    mu_b = gaussian_filter(b, **opts)
    cov = _WIN**2 / (_WIN**2 - 1)  # unbiased local (co)variances
    var_a = cov * (gaussian_filter(a * a, **opts) - mu_a * mu_a)
    var_b = cov * (gaussian_filter(b * b, **opts) - mu_b * mu_b)
    cov_ab = cov * (gaussian_filter(a * b, **opts) - mu_a * mu_b)
    return mu_a, mu_b, var_a, var_b, cov_ab


def _arrays(a, b):
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        if a.grid != b.grid:
            raise ValueError("fields live on different grids")
        return a.as_array(), b.as_array()
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def ssim_map(a, b, luminance: bool = True) -> np.ndarray:
    """Local SSIM of ``a`` against ``b``; ``luminance=False`` drops the mean term."""
    a, b = _arrays(a, b)
    data_range = float(b.max() - b.min())
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    mu_a, mu_b, var_a, var_b, cov_ab = _local_stats(a, b)
    cs = (2 * cov_ab + c2) / (var_a + var_b + c2)
    if not luminance:
        return cs
    return (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1) * cs


def ssim(a, b) -> float:
    """Mean structural similarity of ``a`` against the reference ``b``.

    Gaussian window (11 taps, sigma 1.5), K1 = 0.01, K2 = 0.03 and the dynamic
    range of the reference. A border of half a window is excluded from the
    mean.
    """
    s = ssim_map(a, b)
    pad = _WIN // 2
    inner = s[tuple(slice(pad, -pad) for _ in range(s.ndim))]
    return float(inner.mean())


def binarize(a, fraction: float = 0.5) -> np.ndarray:
    a = a.as_array() if isinstance(a, ScalarField) else np.asarray(a, dtype=float)
    return a >= fraction * a.max()


def dice(a, b, fraction: float = 0.5) -> float:
    """Dice overlap of ``a`` and ``b``, each thresholded at ``fraction`` of its maximum."""
    ma, mb = binarize(a, fraction), binarize(b, fraction)
    total = ma.sum() + mb.sum()
    return 1.0 if total == 0 else float(2.0 * np.logical_and(ma, mb).sum() / total)
