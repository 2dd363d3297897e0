"""Data-fidelity terms comparing simulated and measured sinograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SSD = "ssd"
NCC = "ncc"
DISTANCES = (SSD, NCC)


class NCCUndefinedError(ValueError):
    """Raised when the cross-correlation distance sees a (numerically) zero vector."""


@dataclass(frozen=True, eq=False)
class DistanceEval:
    """Value and first derivative of ``D(x, y)`` in ``x``.

    ``gn_weight`` is the scalar ``w`` of the curvature surrogate ``w * I``
    used in the Gauss-Newton Hessian.
    """

    value: float
    grad: np.ndarray
    gn_weight: float


def _pair(x, y):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def ssd(x, y, h_y: float) -> DistanceEval:
    """Sum of squared differences ``h_y / 2 * |x - y|**2``."""
    x, y = _pair(x, y)
    r = x - y
    return DistanceEval(0.5 * h_y * float(r @ r), h_y * r, h_y)


def ncc(x, y, h_y: float = 1.0) -> DistanceEval:
    """Squared normalised cross correlation distance ``1 - (x.y)**2 / (|x|**2 |y|**2)``.

    The value is invariant to rescaling either argument and lies in
    ``[0, 1]``. ``h_y`` only enters the curvature surrogate.
    """
    x, y = _pair(x, y)
    floor = 1e-14 * np.sqrt(x.size)
    xx = float(x @ x)
    yy = float(y @ y)
    if np.sqrt(xx) < floor or np.sqrt(yy) < floor:
        raise NCCUndefinedError("NCC undefined at 0: an argument has (numerically) zero norm")
    xy = float(x @ y)
    rho2 = xy * xy / (xx * yy)
    grad = -2.0 * xy / (xx * yy) * y + 2.0 * xy * xy / (xx * xx * yy) * x
    return DistanceEval(max(0.0, 1.0 - rho2), grad, h_y)


def evaluate(kind: str, x, y, h_y: float) -> DistanceEval:
    if kind == SSD:
        return ssd(x, y, h_y)
    if kind == NCC:
        return ncc(x, y, h_y)
    raise ValueError(f"unknown distance {kind!r}; expected one of {DISTANCES}")
