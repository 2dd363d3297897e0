"""Inexact Gauss-Newton-Krylov solver for template-based reconstruction.

The unknown is the velocity field ``v``. The reduced objective is

    J(v) = D(K f(v), g) + R(v)

where ``f(v)`` deforms the template, ``K`` is the Radon transform, ``g`` the
measured sinogram, ``D`` a distance and ``R`` the regulariser. Each outer
iteration solves the Gauss-Newton system with preconditioned CG and takes an
Armijo step. :func:`multilevel_reconstruct` runs the solver coarse to fine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from . import distance as dist
from .flow import VelocityField, prolong_velocity
from .grid import ScalarField, bspline_fit, restrict_image
from .radon import RadonOperator, Sinogram, restrict_sinogram
from .regularizer import RegConfig, reg_diag, reg_eval, reg_hessvec, reg_solver
from .solution_map import KINDS, TRANSPORT, SolutionMap

log = logging.getLogger(__name__)

# "regularizer" inverts the regulariser block exactly; "jacobi" uses its diagonal
PRECONDITIONERS = ("regularizer", "jacobi")


@dataclass(frozen=True)
class OptimizerConfig:
    max_gn_iters: int = 20
    grad_tol: float = 1e-4
    obj_tol: float = 1e-6
    step_tol: float = 1e-6
    grad_abs_tol: float = 1e-12
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_ls_trials: int = 12
    pcg_maxit: int = 50
    pcg_tol: float = 1e-2
    eps_psd: float = 1e-8
    preconditioner: str = "regularizer"

    def __post_init__(self):
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")
        for name in ("grad_tol", "obj_tol", "step_tol", "armijo_c", "pcg_tol", "eps_psd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("armijo_c", "backtrack"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything that stays fixed while the velocity changes."""

    template: ScalarField
    data: Sinogram
    kind: str
    distance: str
    reg: RegConfig
    n_steps: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown deformation model {self.kind!r}")
        if self.distance not in dist.DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        grid = self.template.grid
        if (self.reg.grid.n, self.reg.grid.m) != (grid.n, grid.m):
            raise ValueError("regulariser grid does not match the template grid")
        if self.kind == TRANSPORT and self.template.coeffs is None:
            object.__setattr__(self, "template", bspline_fit(self.template))
        op = RadonOperator(self.data.geometry, grid)
        if op.shape[0] != self.data.samples.size:
            raise ValueError("sinogram size does not match the template grid")
        # level sinograms are stored in pixel units; the objective works in
        # domain units so that D and R keep their balance across levels
        unit = 1.0 / self.data.geometry.scale
        object.__setattr__(self, "_op", op)
        object.__setattr__(self, "_unit", unit)
        object.__setattr__(self, "_target", unit * self.data.samples)

    @property
    def operator(self) -> RadonOperator:
        return self._op

    @property
    def target(self) -> np.ndarray:
        """Measured data in domain units."""
        return self._target

    def project(self, x: np.ndarray) -> np.ndarray:
        """Radon transform in domain units."""
        return self._unit * self._op.forward(x)

    def backproject(self, y: np.ndarray) -> np.ndarray:
        return self._unit * self._op.adjoint(y)

    @property
    def grid(self):
        return self.reg.grid

    def eps(self, factor: float = 1e-8) -> float:
        """Shift that keeps the Gauss-Newton matrix positive definite."""
        g = self.reg.grid
        base = self.reg.h_t * g.h**g.n
        return factor * base * (1.0 + float(np.mean(reg_diag(self.reg))))

    def zero_velocity(self) -> VelocityField:
        return VelocityField.zeros(self.reg.grid, self.reg.m_t)


class Objective:
    """``J`` at a fixed ``v`` with its gradient and Gauss-Newton operator."""

    def __init__(self, v: VelocityField, problem: Problem, eps: Optional[float] = None):
        self.v = v
        self.problem = problem
        self.eps = problem.eps() if eps is None else eps
        self.state = SolutionMap(problem.kind, v, problem.template, problem.n_steps)
        self.projection = problem.project(self.state.field.samples)
        h_y = problem.data.geometry.h_y
        d = dist.evaluate(problem.distance, self.projection, problem.target, h_y)
        self.distance = d.value
        self.gn_weight = d.gn_weight
        self.reg, reg_grad = reg_eval(problem.reg, v)
        self.value = self.distance + self.reg
        self.grad = self.state.jacvec_transpose(problem.backproject(d.grad)) + reg_grad

    @property
    def field(self) -> ScalarField:
        return self.state.field

    def hessvec(self, w: np.ndarray) -> np.ndarray:
        p = self.problem
        kjw = p.project(self.state.jacvec(w))
        data = self.state.jacvec_transpose(p.backproject(self.gn_weight * kjw))
        return data + reg_hessvec(self.problem.reg, w) + self.eps * np.asarray(w)


def objective(v: VelocityField, problem: Problem) -> Objective:
    return Objective(v, problem)


@dataclass(frozen=True)
class PCGResult:
    step: np.ndarray
    iterations: int
    rel_residual: float
    fallback: bool = False


def pcg(
    hessvec: Callable[[np.ndarray], np.ndarray],
    grad: np.ndarray,
    precond: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
    tol: float = 1e-2,
    maxit: int = 50,
) -> PCGResult:
    """Approximately solve ``H step = -grad`` with preconditioned CG.

    ``precond`` is either the diagonal of ``H`` (Jacobi) or a callable that
    applies an approximate inverse of ``H``.

    Returns the iterate with the smallest residual. If that iterate is not a
    descent direction, the preconditioned steepest-descent step is returned
    instead.
    """
    b = -np.asarray(grad, dtype=float)
    if callable(precond):
        inv = precond
    else:
        scale = 1.0 / np.asarray(precond, dtype=float)

        def inv(r):
            return scale * r

    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return PCGResult(x, 0, 0.0)
    r = b.copy()
    z = inv(r)
    p = z.copy()
    rz = float(r @ z)
    best, best_res, its = x.copy(), 1.0, 0
    for its in range(1, maxit + 1):
        hp = hessvec(p)
        curv = float(p @ hp)
        if not math.isfinite(curv):
            raise FloatingPointError(f"non-finite curvature in CG iteration {its}")
        if curv <= 0.0:
            its -= 1
            break
        alpha = rz / curv
        x = x + alpha * p
        r = r - alpha * hp
        res = float(np.linalg.norm(r)) / bnorm
        if not math.isfinite(res):
            raise FloatingPointError(f"non-finite residual in CG iteration {its}")
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            break
        z = inv(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if float(best @ grad) < 0.0:
        return PCGResult(best, its, best_res)
    return PCGResult(inv(b), its, best_res, fallback=True)


@dataclass(frozen=True)
class IterationRecord:
    level: int
    iteration: int
    J: float
    D: float
    R: float
    grad_norm: float
    step_norm: float
    mu: float
    ls_trials: int
    pcg_iters: int
    slope: float = 0.0

    def line(self) -> str:
        return (
            f"level={self.level} iter={self.iteration} J={self.J:.10e} D={self.D:.10e} "
            f"R={self.R:.10e} |grad|={self.grad_norm:.4e} mu={self.mu:.4g} pcg={self.pcg_iters}"
        )


@dataclass(eq=False)
class ObjectiveReport:
    v: VelocityField
    field: ScalarField
    history: List[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    line_search_failed: bool = False

    @property
    def J(self) -> float:
        return self.history[-1].J

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration


def armijo_holds(J_old: float, J_new: float, mu: float, slope: float, c: float) -> bool:
    return J_new <= J_old + c * mu * slope


def gauss_newton(
    v0: Optional[VelocityField],
    problem: Problem,
    cfg: OptimizerConfig = OptimizerConfig(),
    level: Optional[int] = None,
    callback: Optional[Callable[[IterationRecord], None]] = None,
) -> ObjectiveReport:
    """Minimise the reduced objective starting from ``v0`` (zero if ``None``)."""
    v = problem.zero_velocity() if v0 is None else v0
    level = problem.grid.level if level is None else level
    eps = problem.eps(cfg.eps_psd)
    obj = Objective(v, problem, eps)
    g0 = float(np.linalg.norm(obj.grad))
    report = ObjectiveReport(v, obj.field)

    def record(it, step_norm=0.0, mu=0.0, trials=0, pcg_its=0, slope=0.0):
        rec = IterationRecord(level, it, obj.value, obj.distance, obj.reg,
                              float(np.linalg.norm(obj.grad)), step_norm, mu, trials, pcg_its, slope)
        report.history.append(rec)
        log.info(rec.line())
        if callback is not None:
            callback(rec)

    record(0)
    if g0 <= cfg.grad_abs_tol:
        report.stop_reason = "gradient vanishes at the initial guess"
        return report

    if cfg.preconditioner == "jacobi":
        precond = reg_diag(problem.reg, eps)
    else:
        precond = reg_solver(problem.reg, eps)
    for it in range(1, cfg.max_gn_iters + 1):
        sol = pcg(obj.hessvec, obj.grad, precond, cfg.pcg_tol, cfg.pcg_maxit)
        step = sol.step
        slope = float(obj.grad @ step)
        mu, accepted, trials = 1.0, None, 0
        while trials < cfg.max_ls_trials:
            trials += 1
            try:
                cand = Objective(v.with_dofs(v.dofs + mu * step), problem, eps)
            except dist.NCCUndefinedError:
                cand = None
            if cand is not None and armijo_holds(obj.value, cand.value, mu, slope, cfg.armijo_c):
                accepted = cand
                break
            mu *= cfg.backtrack
        if accepted is None:
            report.line_search_failed = True
            report.stop_reason = f"line search failed after {trials} trials"
            break
        J_old = obj.value
        step_norm = mu * float(np.linalg.norm(step))
        obj, v = accepted, accepted.v
        report.v, report.field = v, obj.field
        record(it, step_norm, mu, trials, sol.iterations, slope)

        gnorm = float(np.linalg.norm(obj.grad))
        if gnorm <= cfg.grad_tol * g0 or gnorm <= cfg.grad_abs_tol:
            report.stop_reason = "relative gradient norm below tolerance"
            break
        if abs(J_old - obj.value) <= cfg.obj_tol * max(abs(J_old), 1e-300):
            report.stop_reason = "relative objective change below tolerance"
            break
        if step_norm <= cfg.step_tol * max(float(np.linalg.norm(v.dofs)), 1e-300):
            report.stop_reason = "relative step below tolerance"
            break
    else:
        report.stop_reason = "maximum number of iterations"
    return report


@dataclass(eq=False)
class MultilevelResult:
    field: ScalarField
    v: VelocityField
    reports: List[ObjectiveReport]


def build_pyramid(template: ScalarField, data: Sinogram, k_min: int, k_max: int):
    """Templates and sinograms for levels ``k_min..k_max`` (coarsest first)."""
    if template.grid.m != 2**k_max:
        raise ValueError(f"template has m={template.grid.m}, expected 2**{k_max}")
    if k_min > k_max:
        raise ValueError("k_min must not exceed k_max")
    templates, sinos = [template], [data]
    for _ in range(k_max - k_min):
        templates.append(restrict_image(templates[-1]))
        sinos.append(restrict_sinogram(sinos[-1]))
    return templates[::-1], sinos[::-1]


def multilevel_reconstruct(
    template: ScalarField,
    sinogram: Sinogram,
    kind: str,
    distance: str,
    reg: RegConfig,
    cfg: OptimizerConfig = OptimizerConfig(),
    k_min: Optional[int] = None,
    k_max: Optional[int] = None,
    n_steps: int = 5,
    callback: Optional[Callable[[IterationRecord], None]] = None,
    level_iters: Optional[List[int]] = None,
) -> MultilevelResult:
    """Coarse-to-fine reconstruction.

    The template is block-averaged and the data restricted down to level
    ``k_min``. Each level is solved with :func:`gauss_newton`, warm-started
    from the prolongated velocity of the previous level. ``level_iters``
    optionally overrides ``cfg.max_gn_iters`` per level (coarsest first).
    """
    k_max = template.grid.level if k_max is None else k_max
    k_min = k_max if k_min is None else k_min
    templates, sinos = build_pyramid(template, sinogram, k_min, k_max)
    v = None
    reports = []
    for i, (f0, g) in enumerate(zip(templates, sinos)):
        level = k_min + i
        problem = Problem(f0, g, kind, distance, reg.on(f0.grid), n_steps)
        if v is not None:
            v = prolong_velocity(v, f0.grid)
        level_cfg = cfg
        if level_iters is not None:
            level_cfg = replace(cfg, max_gn_iters=level_iters[i])
        report = gauss_newton(v, problem, level_cfg, level, callback)
        reports.append(report)
        v = report.v
    return MultilevelResult(reports[-1].field, v, reports)
