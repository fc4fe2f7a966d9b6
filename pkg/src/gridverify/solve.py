"""First-order solvers over relaxed line-indicator sets.

ML problems live on the capped simplex ``{b in [0,1]^Le : sum(b) = L}``;
MAP problems drop the cardinality constraint and only keep the box.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .errors import StepSizeCollapse
from .grid import GridModel
from .likelihood import DETAILED, SIMPLIFIED, ObjectiveSpec
from .ldf import RADIAL
from .stats import InjectionStatistics, VoltageDataset, rng_for

log = logging.getLogger(__name__)

# default initial steps for small and large feeders (split at 80 buses)
MU_SMALL_GRID = 0.007
MU_LARGE_GRID = 0.0005
MAX_HALVINGS = 30
MAX_RESTARTS = 20
LINE_SEARCHES = ("spectral", "armijo", "fixed")


def default_step_size(n_buses: int) -> float:
    return MU_SMALL_GRID if n_buses < 80 else MU_LARGE_GRID


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = MU_SMALL_GRID
    max_iters: int = 1000
    tol: float = 1e-7
    L: int | None = None
    seed: int = 0
    init: object = "uniform"  # "uniform" | "random" | explicit vector
    line_search: str = "spectral"  # "spectral" | "armijo" | "fixed"

    def __post_init__(self):
        if self.line_search not in LINE_SEARCHES:
            raise ValueError(f"unknown line_search {self.line_search!r}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolverResult:
    b_relaxed: np.ndarray
    objective_trace: list = field(default_factory=list)
    grad_norm_final: float = np.nan
    iterations_used: int = 0
    converged: bool = False
    stationarity_residual: float = np.nan
    gap_trace: list = field(default_factory=list)
    runtime_s: float = 0.0
    method: str = ""

    @property
    def objective(self) -> float:
        return min(self.objective_trace) if self.objective_trace else np.nan


# -- projections ----------------------------------------------------------------


def project_capped_simplex(y, L, tol=1e-10, max_iter=200):
    """Euclidean projection of ``y`` onto {b in [0,1]^n : sum(b) = L}.

    Bisection on the multiplier lambda of the sum constraint, with
    b(lambda) = clip(y - lambda, 0, 1), followed by an exact solve for lambda
    on the resulting free set.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if not 0 <= L <= n:
        raise ValueError(f"L={L} outside [0, {n}]")
    lo, hi = y.min() - 1.0, y.max()
    for _ in range(max_iter):
        lam = 0.5 * (lo + hi)
        s = np.clip(y - lam, 0.0, 1.0).sum()
        if abs(s - L) < tol:
            break
        if s > L:
            lo = lam
        else:
            hi = lam
    b = np.clip(y - lam, 0.0, 1.0)
    # polish: with the active set fixed, lambda solves a scalar linear equation
    free = (b > 0.0) & (b < 1.0)
    if free.any():
        ones = b >= 1.0
        lam_exact = (y[free].sum() + ones.sum() - L) / free.sum()
        cand = np.clip(y - lam_exact, 0.0, 1.0)
        if np.array_equal(cand > 0.0, b > 0.0) and np.array_equal(cand < 1.0, b < 1.0):
            b = cand
    return b


def project_box(y, fixed=None):
    b = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    if fixed is not None:
        b = np.where(np.isnan(fixed), b, fixed)
    return b


def lp_vertex(grad, L):
    """Minimizer of grad^T s over the capped simplex: ones at the L smallest entries.

    Ties go to the lowest line index.
    """
    s = np.zeros_like(grad, dtype=float)
    s[np.argsort(grad, kind="stable")[:L]] = 1.0
    return s


def _box_vertex(grad, fixed):
    s = (grad < 0).astype(float)
    if fixed is not None:
        s = np.where(np.isnan(fixed), s, fixed)
    return s


def _feasible_set(objective: ObjectiveSpec, config: SolverConfig):
    if objective.is_map:
        fixed = objective.fixed
        return (lambda y: project_box(y, fixed)), (lambda g: _box_vertex(g, fixed))
    L = _target_L(objective, config)
    return (lambda y: project_capped_simplex(y, L)), (lambda g: lp_vertex(g, L))


def _target_L(objective, config):
    L = objective.grid.N if config.L is None else config.L
    if int(L) != L or not 0 < L <= objective.grid.Le:
        raise ValueError(f"L must be an integer in [1, Le={objective.grid.Le}], got {L}")
    return int(L)


def initial_point(objective: ObjectiveSpec, config: SolverConfig):
    Le = objective.grid.Le
    init = config.init
    if isinstance(init, str):
        if init == "uniform":
            b0 = np.full(Le, 0.5) if objective.is_map else np.full(Le, _target_L(objective, config) / Le)
        elif init == "random":
            b0 = rng_for(config.seed, 7).uniform(0.0, 1.0, Le)
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        b0 = np.asarray(init, dtype=float).copy()
        if b0.shape != (Le,):
            raise ValueError(f"initial point has shape {b0.shape}, expected ({Le},)")
    project, _ = _feasible_set(objective, config)
    return project(b0)


def _gap(grad, b, vertex):
    return float(grad @ (b - vertex(grad)))


# -- solvers --------------------------------------------------------------------


def pgd(objective: ObjectiveSpec, config: SolverConfig) -> SolverResult:
    """Projected gradient descent, b <- P(b - mu * grad).

    Step-size rules (``config.line_search``):

    ``fixed``
        constant mu; a trial point with infinite objective halves mu for that
        step, at most 30 times.
    ``armijo``
        backtracking along the projection arc until sufficient decrease holds;
        mu doubles after every accepted step.  Objective trace is monotone.
    ``spectral``
        Barzilai-Borwein mu inside the projection, then a nonmonotone Armijo
        backtrack along b + t (P(b - mu grad) - b) against the worst of the
        last few objective values.

    Values are compared relative to ``objective.offset`` so that a flat
    minimum is resolved beyond the precision of the full objective.  The best
    iterate seen is returned.
    """
    t0 = time.perf_counter()
    project, vertex = _feasible_set(objective, config)
    rule = config.line_search
    offset = objective.offset
    evaluate = partial(objective.value_and_gradient, relative=True)
    b = initial_point(objective, config)
    val, grad = evaluate(b)
    if grad is None:
        raise StepSizeCollapse("initial point has infinite objective")
    best_b, best_val, best_grad = b, val, grad
    trace = [val]
    converged = False
    # step sizes are on the likelihood scale; MAP multiplies its gradient by T/2
    mu_trial = config.step_size / (0.5 * objective.T) if objective.is_map else config.step_size
    k = 0
    for k in range(1, config.max_iters + 1):
        if rule == "spectral":
            ref = max(trace[-SPECTRAL_MEMORY:])
            d = project(b - mu_trial * grad) - b
            slope = float(grad @ d)
            t = 1.0
            for _ in range(MAX_HALVINGS + 1):
                b_new = b + t * d if t < 1.0 else b + d
                val_new, grad_new = evaluate(b_new)
                if grad_new is not None and val_new <= ref + ARMIJO_SIGMA * t * slope + _slack(val):
                    break
                t *= 0.5
            else:
                raise StepSizeCollapse(f"no acceptable step after {MAX_HALVINGS} halvings at iteration {k}")
            sk, yk = b_new - b, grad_new - grad
            sy = float(sk @ yk)
            mu_trial = float(np.clip(sk @ sk / sy, MU_MIN, MU_MAX)) if sy > 0 else MU_MAX
        else:
            mu = mu_trial
            for _ in range(MAX_HALVINGS + 1):
                b_new = project(b - mu * grad)
                val_new, grad_new = evaluate(b_new)
                if grad_new is not None and (rule == "fixed" or _sufficient_decrease(val, val_new, grad, b_new - b)):
                    break
                mu *= 0.5
            else:
                raise StepSizeCollapse(f"no acceptable step after {MAX_HALVINGS} halvings at iteration {k}")
            if rule == "armijo":
                mu_trial = 2.0 * mu
        step = np.abs(b_new - b).max()
        b, val, grad = b_new, val_new, grad_new
        trace.append(val)
        if val < best_val:
            best_b, best_val, best_grad = b, val, grad
        if step < config.tol or _gap(grad, b, vertex) < config.tol * max(abs(val + offset), 1.0):
            converged = True
            break
    return SolverResult(
        b_relaxed=best_b,
        objective_trace=[v + offset for v in trace],
        grad_norm_final=float(np.linalg.norm(best_grad)),
        iterations_used=k,
        converged=converged,
        stationarity_residual=_gap(best_grad, best_b, vertex),
        runtime_s=time.perf_counter() - t0,
        method="pgd",
    )


SPECTRAL_MEMORY = 10
MU_MIN, MU_MAX = 1e-10, 1e10


def _slack(val):
    # a few ulps of |f| so that a null step is never rejected
    return 1e-13 * max(abs(val), 1.0)


ARMIJO_SIGMA = 1e-4


def _sufficient_decrease(val, val_new, grad, d):
    return val_new <= val + ARMIJO_SIGMA * float(grad @ d) + _slack(val)


def frank_wolfe(objective: ObjectiveSpec, config: SolverConfig) -> SolverResult:
    """Conditional gradient on the capped simplex for the convex objective.

    The linear step puts ones on the L smallest gradient entries.  Step
    weights are 2/(k+2) counting from k = 1, so the first update does not jump
    onto a vertex and every iterate keeps the full support of the start.
    Stops once the duality gap drops below ``tol``.
    """
    if not objective.is_convex or objective.is_map:
        raise ValueError("Frank-Wolfe is only used for the convex simplified ML objective")
    t0 = time.perf_counter()
    L = _target_L(objective, config)
    b = initial_point(objective, config)
    trace, gaps = [], []
    converged = False
    val = grad = None
    k = 0
    for k in range(1, config.max_iters + 1):
        val, grad = objective.value_and_gradient(b)
        if grad is None:
            raise StepSizeCollapse("Frank-Wolfe iterate has infinite objective; start from an interior point")
        s = lp_vertex(grad, L)
        gap = float(grad @ (b - s))
        trace.append(val)
        gaps.append(gap)
        if gap < config.tol:
            converged = True
            break
        b = b + 2.0 / (k + 2.0) * (s - b)
    else:
        val, grad = objective.value_and_gradient(b)
        trace.append(val)
        gaps.append(float(grad @ (b - lp_vertex(grad, L))))
    return SolverResult(
        b_relaxed=b,
        objective_trace=trace,
        grad_norm_final=float(np.linalg.norm(grad)),
        iterations_used=k,
        converged=converged,
        stationarity_residual=gaps[-1],
        gap_trace=gaps,
        runtime_s=time.perf_counter() - t0,
        method="fw",
    )


@dataclass
class PipelineResult:
    convex: SolverResult
    detailed: SolverResult
    restarts: int = 0

    @property
    def b_relaxed(self):
        return self.detailed.b_relaxed


def solve_convex(grid, stats, dataset, config: SolverConfig, solver="fw") -> SolverResult:
    spec = ObjectiveSpec(SIMPLIFIED, grid, stats, dataset)
    if solver == "fw":
        return frank_wolfe(spec, config)
    if solver == "pgd":
        return pgd(spec, config)
    raise ValueError(f"unknown solver {solver!r}")


def solve_ml_detailed(
    grid: GridModel,
    stats: InjectionStatistics,
    dataset: VoltageDataset,
    config: SolverConfig,
    *,
    convex_solver: str = "pgd",
    convex_config: SolverConfig | None = None,
    mode: str = RADIAL,
    rounder=None,
    max_restarts: int = MAX_RESTARTS,
) -> PipelineResult:
    """Convex simplified problem first, then PGD on the detailed likelihood from its solution.

    The detailed objective is not convex, so PGD may stop at a stationary point
    that a binary configuration beats.  When ``rounder`` (relaxed vector ->
    binary vector) is given, PGD is restarted from the rounded point as long as
    that point has a strictly lower objective than the relaxed one.  Each
    restart strictly lowers the objective, so the loop ends; afterwards the
    relaxed objective is at most the objective of its rounding.
    """
    convex_config = convex_config or replace(config, init="uniform")
    convex = solve_convex(grid, stats, dataset, convex_config, convex_solver)
    spec = ObjectiveSpec(DETAILED, grid, stats, dataset, mode=mode)
    detailed = pgd(spec, replace(config, init=convex.b_relaxed))
    restarts = 0
    while rounder is not None and restarts < max_restarts:
        b_bin = np.asarray(rounder(detailed.b_relaxed), dtype=float)
        if not spec.value(b_bin) < detailed.objective:
            break
        restarts += 1
        log.info("restart %d: rounded point improves the relaxed objective", restarts)
        detailed = pgd(spec, replace(config, init=b_bin))
    return PipelineResult(convex, detailed, restarts)
