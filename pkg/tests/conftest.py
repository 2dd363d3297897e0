import numpy as np
import pytest

from tbir.flow import VelocityField


def random_velocity(grid, m_t=1, seed=0, scale=0.05, support=None):
    """Smooth random velocity: three Gaussian bumps per time plane.

    With ``support`` set the field is multiplied by a C2 cutoff that vanishes
    outside the disk of that radius around the domain centre.
    """
    rng = np.random.default_rng(seed)
    n = grid.n
    centres = rng.uniform(0.35, 0.65, (3, n))
    amps = scale * rng.standard_normal((m_t + 1, 3, n))

    def func(t, pts):
        plane = int(round(t * m_t))
        d2 = ((pts[:, None, :] - centres[None]) ** 2).sum(axis=2)
        out = np.exp(-d2 / (2 * 0.15**2)) @ amps[plane]
        if support is not None:
            r = np.linalg.norm(pts - 0.5, axis=1) / support
            out *= (np.clip(1.0 - r**2, 0.0, None) ** 3)[:, None]
        return out

    return VelocityField.from_function(grid, m_t, func)


def constant_velocity(grid, c, m_t=1):
    c = np.asarray(c, dtype=float)
    return VelocityField.from_function(grid, m_t, lambda t, pts: np.broadcast_to(c, pts.shape))


def rotation_velocity(grid, omega=np.pi / 2, m_t=1):
    def func(t, pts):
        c = pts - 0.5
        return omega * np.stack([-c[:, 1], c[:, 0]], axis=1)

    return VelocityField.from_function(grid, m_t, func)


def adjoint_gap(lhs, rhs):
    return abs(lhs - rhs) / abs(lhs)


def taylor_slope(fun, f0, slope0, hs):
    """Least-squares order of ``|fun(h) - f0 - h * slope0|`` in ``h``."""
    rem = np.array([abs(fun(h) - f0 - h * slope0) for h in hs])
    return np.polyfit(np.log(hs), np.log(rem), 1)[0], rem


def assert_descent(report, c=1e-4):
    """Armijo on every accepted step and a non-increasing J sequence."""
    hist = report.history
    for prev, rec in zip(hist, hist[1:]):
        assert rec.J <= prev.J + c * rec.mu * rec.slope, (prev, rec)
        assert rec.J <= prev.J


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
