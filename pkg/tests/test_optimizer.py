import numpy as np
import pytest
from conftest import assert_descent, random_velocity, taylor_slope

from tbir.experiments import RECIPES, measure, parse_angles
from tbir.flow import VelocityField
from tbir.grid import GridSpec, ScalarField, cell_centers
from tbir.optimizer import (
    Objective,
    OptimizerConfig,
    Problem,
    gauss_newton,
    multilevel_reconstruct,
    objective,
    pcg,
)
from tbir.phantoms import make_phantom
from tbir.radon import geometry_for_level, radon_forward
from tbir.regularizer import RegConfig


def _problem(m=16, kind="transport", distance="ncc", reg="third-order", gamma=1e-4, m_t=1, gamma_t=0.0):
    template, target = make_phantom("blob_warp", m)
    geom = geometry_for_level(parse_angles("8@0:180"), GridSpec(2, m).level)
    cfg = RegConfig(reg, gamma, template.grid, m_t, gamma_t)
    return Problem(template, radon_forward(target, geom), kind, distance, cfg)


def _disk(grid, centre):
    d = np.linalg.norm(cell_centers(grid) - centre, axis=1)
    return ScalarField(grid, np.clip(0.5 - (d - 0.2) / (2 * grid.h), 0, 1))


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(backtrack=1.5)
    with pytest.raises(ValueError):
        OptimizerConfig(grad_tol=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(preconditioner="ilu")


def test_problem_validation():
    template, target = make_phantom("blob_warp", 16)
    geom = geometry_for_level([0.0, 90.0], 4)
    reg = RegConfig("curvature", 1.0, template.grid)
    with pytest.raises(ValueError):
        Problem(template, radon_forward(target, geom), "advection", "ssd", reg)
    with pytest.raises(ValueError):
        Problem(template, radon_forward(target, geom), "transport", "mi", reg)
    with pytest.raises(ValueError):
        Problem(template, radon_forward(target, geom), "transport", "ssd", reg.on(GridSpec(2, 32)))


@pytest.mark.parametrize("kind", ["transport", "continuity"])
def test_zero_residual_start(kind):
    template, _ = make_phantom("blob_warp", 16)
    geom = geometry_for_level(parse_angles("6@0:180"), 4)
    p = Problem(template, radon_forward(template, geom), kind, "ssd", RegConfig("third-order", 1e-3, template.grid))
    obj = objective(VelocityField.zeros(template.grid), p)
    # the spline refit reproduces the template up to roundoff
    assert obj.value <= 1e-28
    assert np.linalg.norm(obj.grad) <= 1e-12


@pytest.mark.parametrize("kind", ["transport", "continuity"])
def test_gauss_newton_operator_symmetric_psd(kind):
    p = _problem(kind=kind)
    v = random_velocity(p.grid, seed=1)
    obj = Objective(v, p)
    rng = np.random.default_rng(2)
    for _ in range(20):
        w, u = rng.standard_normal(v.size), rng.standard_normal(v.size)
        hw, hu = obj.hessvec(w), obj.hessvec(u)
        a, b = hw @ u, w @ hu
        assert abs(a - b) <= 1e-8 * max(abs(a), np.linalg.norm(hw) * np.linalg.norm(u) * 1e-3)
        assert w @ hw >= 0
    w, u = rng.standard_normal(v.size), rng.standard_normal(v.size)
    lin = obj.hessvec(2 * w - 3 * u) - (2 * obj.hessvec(w) - 3 * obj.hessvec(u))
    assert np.linalg.norm(lin) <= 1e-8 * np.linalg.norm(obj.hessvec(w))


def test_gradient_with_time_dependent_velocity():
    p = _problem(kind="transport", distance="ssd", reg="curvature", gamma=1e-2, m_t=2, gamma_t=1e-2)
    v = random_velocity(p.grid, m_t=2, seed=3)
    w = random_velocity(p.grid, m_t=2, seed=4).dofs
    obj = Objective(v, p)
    order, _ = taylor_slope(lambda h: Objective(v.with_dofs(v.dofs + h * w), p).value,
                            obj.value, obj.grad @ w, np.logspace(-1, -5, 5))
    assert order >= 1.9


def test_pcg_identity():
    rhs = np.random.default_rng(0).standard_normal(20)
    res = pcg(lambda x: x, rhs, np.ones(20), tol=1e-12)
    np.testing.assert_allclose(res.step, -rhs, rtol=1e-15)
    assert res.iterations == 1


def test_pcg_diagonal_with_jacobi():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.1, 100, 30)
    rhs = rng.standard_normal(30)
    res = pcg(lambda x: d * x, rhs, d, tol=1e-12)
    assert res.iterations == 1
    np.testing.assert_allclose(res.step, -rhs / d, rtol=1e-12)


def test_pcg_dense_spd_against_direct_solve():
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    a = q @ np.diag(rng.uniform(1, 10, 50)) @ q.T
    rhs = rng.standard_normal(50)
    tol = 1e-8
    res = pcg(lambda x: a @ x, rhs, np.ones(50), tol=tol, maxit=50)
    direct = np.linalg.solve(a, -rhs)
    assert np.linalg.norm(res.step - direct) <= tol * np.linalg.norm(rhs)


def test_pcg_callable_preconditioner():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((40, 40)))
    a = q @ np.diag(rng.uniform(1, 1e4, 40)) @ q.T
    rhs = rng.standard_normal(40)
    inv = np.linalg.inv(a)
    res = pcg(lambda x: a @ x, rhs, lambda r: inv @ r, tol=1e-10)
    assert res.iterations == 1
    np.testing.assert_allclose(res.step, -inv @ rhs, rtol=1e-8)


def test_pcg_falls_back_to_steepest_descent():
    rhs = np.ones(5)
    res = pcg(lambda x: -x, rhs, np.full(5, 2.0))
    assert res.fallback
    np.testing.assert_allclose(res.step, -rhs / 2.0)
    assert res.step @ rhs < 0


def test_pcg_non_finite_aborts():
    with pytest.raises(FloatingPointError):
        pcg(lambda x: np.full_like(x, np.nan), np.ones(3), np.ones(3))


def test_already_optimal_start():
    template, _ = make_phantom("blob_warp", 16)
    geom = geometry_for_level(parse_angles("6@0:180"), 4)
    reg = RegConfig("third-order", 0.0, template.grid, 1, 0.0, 1e-6)
    p = Problem(template, radon_forward(template, geom), "transport", "ssd", reg)
    rep = gauss_newton(None, p)
    assert rep.iterations == 0
    assert rep.J <= 1e-28
    assert rep.history[0].iteration == 0


@pytest.mark.parametrize("kind", ["transport", "continuity"])
@pytest.mark.parametrize("distance", ["ssd", "ncc"])
def test_four_cell_translation(kind, distance):
    g = GridSpec(2, 32)
    template = _disk(g, np.array([0.5, 0.5]))
    target = _disk(g, np.array([0.5 + 4 * g.h, 0.5]))
    geom = geometry_for_level(parse_angles("30@0:180"), g.level)
    p = Problem(template, radon_forward(target, geom), kind, distance, RegConfig("third-order", 1e-4, g))
    rep = gauss_newton(None, p, OptimizerConfig(max_gn_iters=20))
    assert rep.history[-1].D / rep.history[0].D <= 1e-2
    assert rep.iterations <= 20
    assert_descent(rep)


@pytest.mark.parametrize("preconditioner", ["jacobi", "regularizer"])
def test_both_preconditioners_descend(preconditioner):
    p = _problem(kind="transport", distance="ssd", gamma=1e-2)
    rep = gauss_newton(None, p, OptimizerConfig(max_gn_iters=3, preconditioner=preconditioner))
    assert rep.J < rep.history[0].J
    assert all(r.slope < 0 for r in rep.history[1:])
    assert_descent(rep)


def test_single_level_plan_is_gauss_newton():
    p = _problem(m=32, kind="transport", distance="ncc")
    cfg = OptimizerConfig(max_gn_iters=4)
    direct = gauss_newton(None, p, cfg)
    ml = multilevel_reconstruct(p.template, p.data, "transport", "ncc", p.reg, cfg, k_min=5, k_max=5)
    assert len(ml.reports) == 1
    assert [r.J for r in ml.reports[0].history] == [r.J for r in direct.history]
    np.testing.assert_array_equal(ml.v.dofs, direct.v.dofs)


def test_multilevel_runs_coarse_to_fine_and_is_deterministic():
    p = _problem(m=32, kind="continuity", distance="ncc")
    cfg = OptimizerConfig(max_gn_iters=3)
    seen = []
    a = multilevel_reconstruct(p.template, p.data, "continuity", "ncc", p.reg, cfg, k_min=3, k_max=5,
                               callback=seen.append)
    b = multilevel_reconstruct(p.template, p.data, "continuity", "ncc", p.reg, cfg, k_min=3, k_max=5)
    assert [r.history[0].level for r in a.reports] == [3, 4, 5]
    assert a.field.grid.m == 32 and a.v.grid.m == 32
    assert len(seen) == sum(len(r.history) for r in a.reports)
    assert abs(a.reports[-1].J - b.reports[-1].J) <= 1e-9 * abs(a.reports[-1].J)
    for r in a.reports:
        assert_descent(r)


def test_iteration_log_line():
    p = _problem()
    rep = gauss_newton(None, p, OptimizerConfig(max_gn_iters=1))
    line = rep.history[-1].line()
    for key in ("level=4", "iter=1", "J=", "D=", "R=", "|grad|=", "mu=", "pcg="):
        assert key in line


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_multilevel_not_worse_than_single_level_at_equal_budget(seed):
    # paired runs at m = 64: three levels with 5 + 5 + 20 iterations against
    # 30 iterations on the finest level alone
    recipe = RECIPES["disk-transport"].with_(m=64, seed=seed)
    template, _, data = measure(recipe)
    reg = recipe.reg_config(template.grid)
    single = multilevel_reconstruct(template, data, recipe.kind, recipe.distance, reg,
                                    OptimizerConfig(max_gn_iters=30), k_min=6, k_max=6)
    multi = multilevel_reconstruct(template, data, recipe.kind, recipe.distance, reg,
                                   OptimizerConfig(), k_min=4, k_max=6, level_iters=[5, 5, 20])
    for r in single.reports + multi.reports:
        assert_descent(r)
    assert multi.reports[-1].J <= single.reports[-1].J
