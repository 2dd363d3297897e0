import numpy as np
import pytest
from scipy.linalg import lu_factor, lu_solve

from tbir.grid import (
    GridSpec,
    ScalarField,
    bspline_eval,
    bspline_fit,
    cell_centers,
    restrict_image,
    to_array,
)


def test_gridspec_defaults_and_validation():
    g = GridSpec(2, 64)
    assert g.h * g.m == 1.0
    assert g.pad == 8
    assert GridSpec(2, 16).pad == 4
    assert g.velocity_nodes == 80
    with pytest.raises(ValueError):
        GridSpec(2, 48)
    with pytest.raises(ValueError):
        GridSpec(4, 16)


def test_cell_centers_2x2():
    pts = cell_centers(GridSpec(2, 2))
    np.testing.assert_array_equal(pts, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def test_cell_centers_first_centre_and_3d_count():
    assert cell_centers(GridSpec(2, 4))[0, 0] == 0.125
    pts = cell_centers(GridSpec(3, 8))
    assert pts.shape == (512, 3)
    assert np.all((pts > 0) & (pts < 1))


def test_scalar_field_rejects_wrong_length():
    with pytest.raises(ValueError):
        ScalarField(GridSpec(2, 8), np.zeros(63))


def test_fit_rejects_non_finite():
    s = np.zeros(64)
    s[3] = np.nan
    with pytest.raises(ValueError):
        bspline_fit(ScalarField(GridSpec(2, 8), s))


def test_eval_without_coeffs_is_rejected():
    with pytest.raises(ValueError):
        bspline_eval(ScalarField(GridSpec(2, 8), np.zeros(64)), np.array([[0.5, 0.5]]))


def test_constant_field_reproduced_everywhere_inside():
    g = GridSpec(2, 16)
    f = bspline_fit(ScalarField(g, np.full(g.size, 3.5)))
    pts = np.random.default_rng(0).uniform(2 * g.h, 1 - 2 * g.h, (200, 2))
    vals, grads = bspline_eval(f, pts)
    np.testing.assert_allclose(vals, 3.5, rtol=1e-13)
    np.testing.assert_allclose(grads, 0.0, atol=1e-11)


def test_zero_field_has_zero_coefficients():
    f = bspline_fit(ScalarField(GridSpec(2, 8), np.zeros(64)))
    assert np.all(f.coeffs == 0)


def _dense_coefficients(samples: np.ndarray) -> np.ndarray:
    # same end condition as the library (boundary rows interpolate directly),
    # solved as one dense tensor-product system with LU
    m = samples.shape[0]
    a = np.zeros((m, m))
    for i in range(m):
        a[i, i] = 4 / 6
        if i > 0:
            a[i, i - 1] = 1 / 6
        if i < m - 1:
            a[i, i + 1] = 1 / 6
    a[0] = 0
    a[-1] = 0
    a[0, 0] = a[-1, -1] = 1
    big = np.kron(a, a)  # first axis fastest
    return lu_solve(lu_factor(big), samples.reshape(-1, order="F"))


def test_random_8x8_fit_matches_dense_lu_and_reproduces_samples():
    g = GridSpec(2, 8)
    arr = np.random.default_rng(3).standard_normal((8, 8))
    f = bspline_fit(ScalarField.from_array(arr))
    np.testing.assert_allclose(f.coeffs, _dense_coefficients(arr), atol=1e-12)
    vals, _ = bspline_eval(f, cell_centers(g))
    assert np.max(np.abs(vals - f.samples)) <= 1e-10 * (1 + np.abs(f.samples).max())


def test_reproduction_on_random_fields():
    rng = np.random.default_rng(4)
    for m in (8, 16, 32):
        g = GridSpec(2, m)
        f = bspline_fit(ScalarField(g, 100 * rng.standard_normal(g.size)))
        vals, _ = bspline_eval(f, cell_centers(g))
        assert np.max(np.abs(vals - f.samples)) <= 1e-10 * (1 + np.abs(f.samples).max())


def test_reproduction_3d():
    g = GridSpec(3, 8)
    f = bspline_fit(ScalarField(g, np.random.default_rng(5).random(g.size)))
    vals, _ = bspline_eval(f, cell_centers(g))
    assert np.max(np.abs(vals - f.samples)) <= 1e-10 * 2


def test_linear_ramp_gradient():
    g = GridSpec(2, 32)
    x = cell_centers(g)
    f = bspline_fit(ScalarField(g, x[:, 0]))
    pts = np.random.default_rng(6).uniform(2 * g.h, 1 - 2 * g.h, (100, 2))
    _, grads = bspline_eval(f, pts)
    np.testing.assert_allclose(grads, np.tile([1.0, 0.0], (100, 1)), atol=1e-8)


def test_gradient_matches_central_differences():
    g = GridSpec(2, 32)
    x = cell_centers(g)
    smooth = np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + np.exp(-10 * ((x - 0.4) ** 2).sum(1))
    f = bspline_fit(ScalarField(g, smooth))
    pts = np.random.default_rng(7).uniform(2 * g.h, 1 - 2 * g.h, (100, 2))
    _, grads = bspline_eval(f, pts)
    step = 1e-5
    fd = np.empty_like(grads)
    for d in range(2):
        e = np.zeros(2)
        e[d] = step
        fd[:, d] = (bspline_eval(f, pts + e)[0] - bspline_eval(f, pts - e)[0]) / (2 * step)
    rel = np.linalg.norm(grads - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-3)
    assert rel.max() <= 1e-4


def test_outside_points_evaluate_to_zero():
    g = GridSpec(2, 8)
    f = bspline_fit(ScalarField(g, np.ones(g.size)))
    vals, grads = bspline_eval(f, np.array([[-0.1, 0.5], [0.5, 1.2], [2.0, 2.0]]))
    assert np.all(vals == 0) and np.all(grads == 0)


def test_restrict_constant_and_2x2_example():
    g = GridSpec(2, 8)
    out = restrict_image(ScalarField(g, np.full(g.size, 2.5)))
    assert out.grid.m == 4
    np.testing.assert_allclose(out.samples, 2.5)
    arr = np.array([[0.0, 2.0], [4.0, 6.0]])
    assert restrict_image(ScalarField.from_array(arr)).samples.tolist() == [3.0]


def test_restrict_preserves_mean():
    f = ScalarField(GridSpec(2, 16), np.random.default_rng(8).random(256))
    out = restrict_image(f)
    assert abs(out.samples.mean() - f.samples.mean()) <= 1e-12 * abs(f.samples.mean())
    assert to_array(out.grid, out.samples).shape == (8, 8)


def test_restrict_rejects_odd():
    # a 1-cell grid cannot be halved
    with pytest.raises(ValueError):
        restrict_image(ScalarField(GridSpec(2, 1), np.zeros(1)))
