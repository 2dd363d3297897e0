"""Analytic test images and measurement noise."""

from __future__ import annotations

import math

import numpy as np

from .grid import GridSpec, ScalarField, cell_centers
from .radon import Sinogram

PHANTOMS = ("disk_pair", "blob_warp", "affine_warp")


def _ramp(signed_dist: np.ndarray, width: float) -> np.ndarray:
    """Smoothed indicator: 1 inside (negative distance), linear over ``width``."""
    return np.clip(0.5 - signed_dist / width, 0.0, 1.0)


def _disk(pts, centre, radius, width):
    return _ramp(np.linalg.norm(pts - centre, axis=1) - radius, width)


def _ellipse(pts, centre, axes, angle_deg, width):
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])
    local = (pts - centre) @ rot.T
    r = np.sqrt((local[:, 0] / axes[0]) ** 2 + (local[:, 1] / axes[1]) ** 2)
    # approximate signed distance, exact on the boundary normal for circles
    return _ramp((r - 1.0) * min(axes), width)


def _blobs(pts):
    centres = np.array([[0.4, 0.42], [0.6, 0.58], [0.58, 0.36]])
    widths = np.array([0.09, 0.07, 0.05])
    amps = np.array([1.0, 0.8, 0.6])
    d2 = ((pts[:, None, :] - centres[None]) ** 2).sum(axis=2)
    return (amps * np.exp(-0.5 * d2 / widths**2)).sum(axis=1)


def _blob_displacement(pts, strength):
    # smooth swirl that vanishes towards the boundary
    c = pts - 0.5
    bump = np.exp(-(c**2).sum(axis=1) / 0.04)
    return strength * 0.06 * bump[:, None] * np.stack([-c[:, 1] + 0.3 * c[:, 0], c[:, 0]], axis=1) / 0.2


def _shape(pts, width):
    """Asymmetric 'hand-like' object: a body, a thumb and a darker insert."""
    body = _ellipse(pts, np.array([0.5, 0.5]), (0.26, 0.17), 20.0, width)
    thumb = _ellipse(pts, np.array([0.67, 0.7]), (0.12, 0.04), 55.0, width)
    finger = _ellipse(pts, np.array([0.3, 0.66]), (0.1, 0.035), -35.0, width)
    out = np.maximum(np.maximum(body, thumb), finger)
    insert = _disk(pts, np.array([0.56, 0.46]), 0.05, width)
    return out - 0.4 * insert * body


def _affine_inverse(pts, angle_deg, scale):
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return (pts - 0.5) @ rot / scale + 0.5


def make_phantom(kind: str, m: int, strength: float = 1.0, contrast: float = 1.0):
    """Return ``(template, target)`` fields on the ``m x m`` grid.

    ``disk_pair``
        Centred disk of radius 0.2 and intensity 1 versus a disk of radius
        ``0.2 / sqrt(2)`` and intensity 2 (equal mass).
    ``blob_warp``
        Three Gaussians and a smooth swirl of them; ``strength`` scales the
        displacement (0 gives identical images).
    ``affine_warp``
        An asymmetric object and the same object rotated by 10 degrees and
        scaled by 5 % about the centre, times ``contrast``.

    Edges are ramped over two cells.
    """
    grid = GridSpec(2, m)
    pts = cell_centers(grid)
    width = 2.0 * grid.h
    if kind == "disk_pair":
        centre = np.array([0.5, 0.5])
        template = _disk(pts, centre, 0.2, width)
        target = 2.0 * _disk(pts, centre, 0.2 / math.sqrt(2.0), width)
    elif kind == "blob_warp":
        template = _blobs(pts)
        target = _blobs(pts - _blob_displacement(pts, strength))
    elif kind == "affine_warp":
        template = _shape(pts, width)
        target = contrast * _shape(_affine_inverse(pts, 10.0 * strength, 1.0 + 0.05 * strength), width)
    else:
        raise ValueError(f"unknown phantom {kind!r}; expected one of {PHANTOMS}")
    return ScalarField(grid, template), ScalarField(grid, target)


def add_noise(s: Sinogram, level: float, seed: int = 0) -> Sinogram:
    """Add white Gaussian noise with standard deviation ``level * mean(|s|)``."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return s
    rng = np.random.default_rng(seed)
    sigma = level * float(np.mean(np.abs(s.samples)))
    return s.with_samples(s.samples + sigma * rng.standard_normal(s.samples.size))
