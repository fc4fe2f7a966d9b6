"""Verification metrics, baselines and the Monte Carlo experiment harness."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import GridVerifyError, LengthMismatch
from .grid import GridModel
from .ldf import RADIAL, rx
from .likelihood import DETAILED, SIMPLIFIED, ObjectiveSpec, map_spec
from .rounding import round_bernoulli, round_spanning_forest, round_top_l, spanning_forest
from .solve import SolverConfig, pgd, solve_convex, solve_ml_detailed
from .stats import (
    InjectionStatistics,
    VoltageDataset,
    model_covariance_detailed,
    rng_for,
    sample_covariance,
    simulate_voltages,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.05, 0.601, 0.05), 2))
RESULT_COLUMNS = (
    "run",
    "scheme",
    "T",
    "line_errors",
    "error_probability",
    "tpr",
    "fpr",
    "runtime_ms",
    "objective_relaxed",
    "objective_binary",
    "threshold",
    "status",
)


@dataclass(frozen=True)
class VerificationMetrics:
    line_errors: int
    error_probability: float
    true_positive_rate: float
    false_positive_rate: float
    false_positives: int
    false_negatives: int


def compare_topologies(b_hat, b_true, switchable=None) -> VerificationMetrics:
    """Line-status errors over all lines; TPR/FPR over the switchable subset.

    Positives are energized lines.  With no positives (negatives) in the
    subset, TPR (FPR) is reported as 1 (0).
    """
    b_hat = np.asarray(b_hat, dtype=float)
    b_true = np.asarray(b_true, dtype=float)
    if b_hat.shape != b_true.shape:
        raise LengthMismatch(f"estimate has {b_hat.size} lines, truth has {b_true.size}")
    h, t = b_hat > 0.5, b_true > 0.5
    fp_all = int(np.sum(h & ~t))
    fn_all = int(np.sum(~h & t))
    sw = np.ones(t.size, dtype=bool) if switchable is None else np.asarray(switchable, dtype=bool)
    if sw.shape != t.shape:
        raise LengthMismatch("switchable mask length differs from line count")
    tp = np.sum(h & t & sw)
    pos = np.sum(t & sw)
    fp = np.sum(h & ~t & sw)
    neg = np.sum(~t & sw)
    errors = fp_all + fn_all
    return VerificationMetrics(
        line_errors=errors,
        error_probability=errors / t.size if t.size else 0.0,
        true_positive_rate=float(tp / pos) if pos else 1.0,
        false_positive_rate=float(fp / neg) if neg else 0.0,
        false_positives=fp_all,
        false_negatives=fn_all,
    )


def random_topology(grid: GridModel, rng, L: int | None = None) -> np.ndarray:
    """Uniform random spanning forest over the switchable lines.

    Non-switchable lines are always kept (they get weights above every
    switchable one); for L > N extra switchable lines are added at random.
    """
    w = rng.random(grid.Le) + np.where(grid.switchable, 0.0, 2.0)
    return spanning_forest(grid, w, L)


def default_priors(grid: GridModel, switch_prior=0.5, line_prior=0.9) -> np.ndarray:
    """File priors where given, else ``switch_prior`` / ``line_prior`` by switchability."""
    fallback = np.where(grid.switchable, switch_prior, line_prior)
    return np.where(np.isnan(grid.priors), fallback, grid.priors)


def inverse_covariance_baseline(grid: GridModel, dataset: VoltageDataset, L: int | None = None) -> np.ndarray:
    """Sign pattern of the pseudo-inverse sample covariance fed to a spanning forest.

    Line scores are -P[u, v] for lines between two load buses and the row sum
    of P at the load end for lines leaving a substation, where P = pinv(S_hat);
    the forest keeps the highest-scoring candidate lines.
    """
    P = np.linalg.pinv(dataset.sample_cov)
    pos = grid.reduced_position()
    score = np.empty(grid.Le)
    for ln, (u, v) in enumerate(grid.endpoints):
        pu, pv = pos[u], pos[v]
        if pu >= 0 and pv >= 0:
            score[ln] = -P[pu, pv]
        elif pu >= 0 or pv >= 0:
            j = max(pu, pv)
            score[ln] = P[j].sum()
        else:
            score[ln] = -np.inf
    return spanning_forest(grid, score, L)


def rank_of_thresholds(b_relaxed, thresholds, fixed=None):
    """Binary vectors b >= threshold for each threshold (clamped lines kept)."""
    out = []
    for thr in thresholds:
        b = (np.asarray(b_relaxed) >= thr).astype(float)
        if fixed is not None:
            b = np.where(np.isnan(fixed), b, fixed)
        out.append(b)
    return out


# -- Monte Carlo ----------------------------------------------------------------

SCHEMES = ("ml_detailed", "ml_simplified", "map", "random", "inverse_covariance")


@dataclass(frozen=True)
class MonteCarloConfig:
    runs: int = 30
    T_grid: tuple = (10, 50, 200, 500)
    schemes: tuple = ("ml_detailed", "ml_simplified", "random")
    L: int | None = None
    mode: str = RADIAL
    solver: SolverConfig = field(default_factory=SolverConfig)
    convex_solver: str = "pgd"
    rounding: str = "topl"
    bernoulli_samples: int = 2000
    thresholds: tuple = DEFAULT_THRESHOLDS
    switch_prior: float = 0.5
    line_prior: float = 0.9
    seed: int = 0
    jobs: int = 1
    asymptotic: bool = False

    def __post_init__(self):
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown scheme(s) {sorted(unknown)}")
        if self.rounding not in ("topl", "forest", "bernoulli"):
            raise ValueError(f"unknown rounding {self.rounding!r}")


def _round(cfg, grid, b_relaxed, objective, L, seed):
    if cfg.rounding == "topl":
        return round_top_l(b_relaxed, L, objective, grid)
    if cfg.rounding == "forest":
        return round_spanning_forest(grid, b_relaxed, objective, L)
    return round_bernoulli(grid, b_relaxed, objective, cfg.bernoulli_samples, seed, L)


def _row(run, scheme, T, metrics, runtime_s, obj_relaxed, obj_binary, threshold=np.nan, status="ok"):
    return {
        "run": run,
        "scheme": scheme,
        "T": T,
        "line_errors": metrics.line_errors if metrics else -1,
        "error_probability": metrics.error_probability if metrics else np.nan,
        "tpr": metrics.true_positive_rate if metrics else np.nan,
        "fpr": metrics.false_positive_rate if metrics else np.nan,
        "runtime_ms": 1000.0 * runtime_s,
        "objective_relaxed": obj_relaxed,
        "objective_binary": obj_binary,
        "threshold": threshold,
        "status": status,
    }


def run_single(grid: GridModel, stats: InjectionStatistics, cfg: MonteCarloConfig, run: int) -> list[dict]:
    """One Monte Carlo run: a random true topology evaluated at every T."""
    L = grid.N if cfg.L is None else cfg.L
    b_true = random_topology(grid, rng_for(cfg.seed, run, 0), L)
    rows = []
    for T in cfg.T_grid:
        data_seed = int(rng_for(cfg.seed, run, 1, T).integers(2**62))
        if cfg.asymptotic:
            dataset = VoltageDataset.from_covariance(model_covariance_detailed(rx(grid, b_true, cfg.mode), stats), T)
        else:
            dataset = sample_covariance(simulate_voltages(grid, b_true, stats, T, data_seed, cfg.mode))
        solver = replace(cfg.solver, L=L)
        for scheme in cfg.schemes:
            t0 = time.perf_counter()
            try:
                rows.extend(_run_scheme(scheme, grid, stats, dataset, solver, cfg, b_true, run, T, L, t0))
            except GridVerifyError as exc:
                log.warning("run %d scheme %s T=%d failed: %s", run, scheme, T, exc)
                rows.append(_row(run, scheme, T, None, time.perf_counter() - t0, np.nan, np.nan, status=exc.code))
    return rows


def _run_scheme(scheme, grid, stats, dataset, solver, cfg, b_true, run, T, L, t0):
    round_seed = int(rng_for(cfg.seed, run, 2, T).integers(2**62))
    if scheme == "ml_detailed":
        spec = ObjectiveSpec(DETAILED, grid, stats, dataset, mode=cfg.mode)
        res = solve_ml_detailed(
            grid,
            stats,
            dataset,
            solver,
            convex_solver=cfg.convex_solver,
            mode=cfg.mode,
            rounder=lambda b: _round(cfg, grid, b, spec, L, round_seed).b_binary,
        )
        rep = _round(cfg, grid, res.detailed.b_relaxed, spec, L, round_seed)
        m = compare_topologies(rep.b_binary, b_true, grid.switchable)
        return [_row(run, scheme, T, m, time.perf_counter() - t0, res.detailed.objective, rep.objective_at_binary)]
    if scheme == "ml_simplified":
        res = solve_convex(grid, stats, dataset, solver, cfg.convex_solver)
        spec = ObjectiveSpec(SIMPLIFIED, grid, stats, dataset)
        rep = _round(cfg, grid, res.b_relaxed, spec, L, round_seed)
        m = compare_topologies(rep.b_binary, b_true, grid.switchable)
        return [_row(run, scheme, T, m, time.perf_counter() - t0, res.objective, rep.objective_at_binary)]
    if scheme == "map":
        spec = map_spec(grid, stats, dataset, default_priors(grid, cfg.switch_prior, cfg.line_prior), mode=cfg.mode)
        res = pgd(spec, replace(solver, init="random", seed=round_seed))
        runtime = time.perf_counter() - t0
        rows = []
        for thr, b in zip(cfg.thresholds, rank_of_thresholds(res.b_relaxed, cfg.thresholds, spec.fixed)):
            m = compare_topologies(b, b_true, grid.switchable)
            rows.append(_row(run, scheme, T, m, runtime, res.objective, spec.value(b), threshold=float(thr)))
        return rows
    if scheme == "random":
        b = random_topology(grid, rng_for(round_seed), L)
        m = compare_topologies(b, b_true, grid.switchable)
        return [_row(run, scheme, T, m, time.perf_counter() - t0, np.nan, np.nan)]
    if scheme == "inverse_covariance":
        b = inverse_covariance_baseline(grid, dataset, L)
        m = compare_topologies(b, b_true, grid.switchable)
        return [_row(run, scheme, T, m, time.perf_counter() - t0, np.nan, np.nan)]
    raise ValueError(f"unknown scheme {scheme!r}")


def _run_star(args):
    return run_single(*args)


def monte_carlo(grid: GridModel, stats: InjectionStatistics, cfg: MonteCarloConfig) -> list[dict]:
    """All runs; rows ordered by (run, T, scheme order).  Seed-deterministic for any ``jobs``."""
    tasks = [(grid, stats, cfg, run) for run in range(cfg.runs)]
    if cfg.jobs > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_star, tasks))
    else:
        chunks = [_run_star(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize(rows: list[dict]) -> dict:
    """Mean error probability per (scheme, T[, threshold]) over successful runs."""
    acc: dict = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        key = (r["scheme"], r["T"]) if np.isnan(r["threshold"]) else (r["scheme"], r["T"], r["threshold"])
        acc.setdefault(key, []).append(r["error_probability"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


def roc_points(rows: list[dict], T: int, scheme: str = "map") -> list[tuple[float, float, float]]:
    """(threshold, mean FPR, mean TPR) for each swept threshold at sample count T."""
    acc: dict = {}
    for r in rows:
        if r["scheme"] == scheme and r["T"] == T and r["status"] == "ok":
            acc.setdefault(r["threshold"], []).append((r["fpr"], r["tpr"]))
    return [(thr, float(np.mean([p[0] for p in v])), float(np.mean([p[1] for p in v]))) for thr, v in sorted(acc.items())]


def format_rows(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return out.getvalue()


def metrics_dict(m: VerificationMetrics) -> dict:
    return asdict(m)
