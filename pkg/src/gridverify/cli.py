"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 solver failure.  Every error path
prints a JSON object with an ``error_code`` field (to ``--out`` when given,
otherwise stdout) and a human-readable message on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GridVerifyError, InputError, StepSizeCollapse
from .evaluation import (
    DEFAULT_THRESHOLDS,
    SCHEMES,
    MonteCarloConfig,
    compare_topologies,
    format_rows,
    inverse_covariance_baseline,
    metrics_dict,
    monte_carlo,
    random_topology,
    rank_of_thresholds,
    roc_points,
    summarize,
)
from .grid import GridModel, format_line_values, load_grid, load_line_values, load_status
from .ldf import MODES, RADIAL
from .likelihood import DETAILED, SIMPLIFIED, ObjectiveSpec, map_spec
from .rounding import round_bernoulli, round_spanning_forest, round_top_l
from .solve import SolverConfig, default_step_size, frank_wolfe, pgd, solve_ml_detailed
from .stats import (
    format_voltages,
    load_stats,
    load_voltages,
    rng_for,
    sample_covariance,
    simulate_voltages,
    stats_digest,
)

log = logging.getLogger("gridverify")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class UsageError(InputError):
    code = "usage"


class MissingFile(InputError):
    code = "file_not_found"


def _env_seed() -> int:
    raw = os.environ.get("GRIDVERIFY_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GRIDVERIFY_SEED={raw!r} is not an integer") from None


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{what} file not found: {p}")
    return p


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(obj, path: Path | None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _stamp(report: dict, args, started: float) -> dict:
    """Add wall-clock fields unless --no-timestamp asks for reproducible bytes."""
    if not args.no_timestamp:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        report["wall_time_s"] = time.perf_counter() - started
    return report


# -- shared argument groups -----------------------------------------------------


def _add_common(p: argparse.ArgumentParser, data=True):
    p.add_argument("--grid", required=True, help="grid CSV file")
    p.add_argument("--stats", required=True, help="injection statistics JSON file")
    if data:
        p.add_argument("--voltages", required=True, help="voltage magnitude CSV (rows = time, columns = buses)")
    p.add_argument("--mode", choices=MODES, default=RADIAL, help="LDF model for the detailed likelihood")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $GRIDVERIFY_SEED or 0)")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamp and timing fields")


def _add_solver(p: argparse.ArgumentParser):
    p.add_argument("--L", type=int, default=None, help="number of energized lines (default: N, radial)")
    p.add_argument("--mu", type=float, default=None, help="(initial) step size on the likelihood scale; default by grid size")
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--line-search", choices=("spectral", "armijo", "fixed"), default="spectral")


def _solver_config(args, grid: GridModel, seed: int) -> SolverConfig:
    if args.L is not None and not 0 < args.L <= grid.Le:
        raise UsageError(f"--L must lie in [1, Le={grid.Le}], got {args.L}")
    if args.L is not None and args.L < grid.N:
        raise UsageError(f"--L={args.L} is below N={grid.N}; some bus would be disconnected")
    mu = args.mu if args.mu is not None else default_step_size(grid.n_total)
    try:
        return SolverConfig(
            step_size=mu, max_iters=args.max_iters, tol=args.tol, L=args.L, seed=seed, line_search=args.line_search
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_inputs(args, need_data=True):
    grid = load_grid(_existing(args.grid, "grid"))
    stats = load_stats(_existing(args.stats, "stats"), grid)
    dataset = None
    if need_data:
        dataset = sample_covariance(load_voltages(_existing(args.voltages, "voltages"), grid))
    return grid, stats, dataset


def _line_table(grid, b_relaxed, b_binary) -> str:
    rows = ["line_id,from,to,relaxed,status"]
    for i, ln in enumerate(grid.lines):
        rows.append(
            f"{grid.line_labels[i]},{grid.bus_labels[ln.from_bus]},{grid.bus_labels[ln.to_bus]},"
            f"{float(b_relaxed[i])!r},{int(b_binary[i])}"
        )
    return "\n".join(rows) + "\n"


def _emit(report, args, grid=None, b_relaxed=None, b_binary=None):
    out = Path(args.out) if args.out else None
    _write_json(report, out)
    if out is not None and b_binary is not None:
        out.with_suffix(".lines.csv").write_text(_line_table(grid, b_relaxed, b_binary), encoding="utf-8")


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    grid, stats, _ = _load_inputs(args, need_data=False)
    if args.status:
        b_true = load_status(_existing(args.status, "status"), grid)
    else:
        b_true = random_topology(grid, rng_for(seed, 99), args.L)
    if args.T < 1:
        raise UsageError("--T must be at least 1")
    raw = simulate_voltages(grid, b_true, stats, args.T, seed, args.mode)
    text = format_voltages(grid, raw)
    manifest = {
        "command": "simulate",
        "version": __version__,
        "seed": seed,
        "T": args.T,
        "mode": args.mode,
        "stats_digest": stats_digest(stats),
        "b_true": {lab: int(v) for lab, v in zip(grid.line_labels, b_true)},
    }
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        out.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        out.with_suffix(".status.csv").write_text(format_line_values(grid, b_true, "status"), encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _round(args, grid, b_relaxed, spec, L, seed):
    if args.rounding == "topl":
        return round_top_l(b_relaxed, L, spec, grid)
    if args.rounding == "forest":
        return round_spanning_forest(grid, b_relaxed, spec, L)
    return round_bernoulli(grid, b_relaxed, spec, args.bernoulli_samples, seed, L)


def cmd_verify(args) -> int:
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else _env_seed()
    if args.solver == "fw" and args.model != SIMPLIFIED:
        raise UsageError("--solver fw is only available with --model simplified")
    grid, stats, dataset = _load_inputs(args)
    cfg = _solver_config(args, grid, seed)
    L = grid.N if cfg.L is None else cfg.L
    report = {"command": "verify", "version": __version__, "model": args.model, "solver": args.solver}
    if args.model == SIMPLIFIED:
        spec = ObjectiveSpec(SIMPLIFIED, grid, stats, dataset)
        res = frank_wolfe(spec, cfg) if args.solver == "fw" else pgd(spec, cfg)
        stages = {"convex": res}
    else:
        spec = ObjectiveSpec(DETAILED, grid, stats, dataset, mode=args.mode)
        pipe = solve_ml_detailed(
            grid,
            stats,
            dataset,
            cfg,
            convex_solver=args.convex_solver,
            mode=args.mode,
            rounder=lambda b: _round(args, grid, b, spec, L, seed).b_binary,
        )
        res = pipe.detailed
        stages = {"convex": pipe.convex, "detailed": pipe.detailed}
        report["restarts"] = pipe.restarts
    rep = _round(args, grid, res.b_relaxed, spec, L, seed)
    report.update(
        status="ok",
        T=dataset.T,
        L=L,
        rounding=rep.method,
        feasible=rep.feasible,
        objective_relaxed=res.objective,
        objective_binary=rep.objective_at_binary,
        stages={
            name: {
                "method": r.method,
                "iterations": r.iterations_used,
                "converged": r.converged,
                "objective": r.objective,
                "stationarity_residual": r.stationarity_residual,
            }
            for name, r in stages.items()
        },
        lines=[
            {"line_id": lab, "relaxed": float(v), "status": int(s)}
            for lab, v, s in zip(grid.line_labels, res.b_relaxed, rep.b_binary)
        ],
    )
    if not args.no_timestamp:
        for name, r in stages.items():
            report["stages"][name]["runtime_s"] = r.runtime_s
    if args.truth:
        truth = load_status(_existing(args.truth, "truth"), grid)
        report["metrics"] = metrics_dict(compare_topologies(rep.b_binary, truth, grid.switchable))
    _emit(_stamp(report, args, started), args, grid, res.b_relaxed, rep.b_binary)
    return EXIT_OK


def cmd_verify_map(args) -> int:
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else _env_seed()
    grid, stats, dataset = _load_inputs(args)
    cfg = _solver_config(args, grid, seed)
    if args.priors:
        priors = load_line_values(_existing(args.priors, "priors"), grid, "prior")
        if np.any((priors < 0) | (priors > 1)):
            raise UsageError("priors must lie in [0, 1]")
        priors = np.where(np.isnan(priors), grid.priors, priors)
    else:
        priors = np.array(grid.priors)
    spec = map_spec(grid, stats, dataset, priors, simplified=args.model == SIMPLIFIED, mode=args.mode)
    res = pgd(spec, replace(cfg, init=args.init))
    b_bin = rank_of_thresholds(res.b_relaxed, [args.threshold], spec.fixed)[0]
    report = {
        "command": "verify-map",
        "version": __version__,
        "status": "ok",
        "model": args.model,
        "T": dataset.T,
        "threshold": args.threshold,
        "objective_relaxed": res.objective,
        "objective_binary": spec.value(b_bin),
        "iterations": res.iterations_used,
        "converged": res.converged,
        "lines": [
            {"line_id": lab, "prior": None if np.isnan(p) else float(p), "relaxed": float(v), "status": int(s)}
            for lab, p, v, s in zip(grid.line_labels, priors, res.b_relaxed, b_bin)
        ],
    }
    if args.truth:
        truth = load_status(_existing(args.truth, "truth"), grid)
        report["metrics"] = metrics_dict(compare_topologies(b_bin, truth, grid.switchable))
        sweep = args.sweep or ()
        report["roc"] = [
            {"threshold": thr, **metrics_dict(compare_topologies(b, truth, grid.switchable))}
            for thr, b in zip(sweep, rank_of_thresholds(res.b_relaxed, sweep, spec.fixed))
        ]
    _emit(_stamp(report, args, started), args, grid, res.b_relaxed, b_bin)
    return EXIT_OK


def cmd_baselines(args) -> int:
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else _env_seed()
    grid, stats, dataset = _load_inputs(args)
    L = grid.N if args.L is None else args.L
    estimates = {
        "random": random_topology(grid, rng_for(seed, 3), L),
        "inverse_covariance": inverse_covariance_baseline(grid, dataset, L),
    }
    truth = load_status(_existing(args.truth, "truth"), grid) if args.truth else None
    report = {"command": "baselines", "version": __version__, "status": "ok", "T": dataset.T, "schemes": {}}
    for name, b in estimates.items():
        entry = {"lines": {lab: int(v) for lab, v in zip(grid.line_labels, b)}}
        if truth is not None:
            entry["metrics"] = metrics_dict(compare_topologies(b, truth, grid.switchable))
        report["schemes"][name] = entry
    _emit(_stamp(report, args, started), args)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else _env_seed()
    grid, stats, _ = _load_inputs(args, need_data=False)
    solver = _solver_config(args, grid, seed)
    unknown = set(args.schemes) - set(SCHEMES)
    if unknown:
        raise UsageError(f"unknown scheme(s) {sorted(unknown)}; choose from {SCHEMES}")
    cfg = MonteCarloConfig(
        runs=args.runs,
        T_grid=args.T,
        schemes=tuple(args.schemes),
        L=args.L,
        mode=args.mode,
        solver=solver,
        convex_solver=args.convex_solver,
        rounding=args.rounding,
        thresholds=args.thresholds,
        seed=seed,
        jobs=args.jobs,
    )
    rows = monte_carlo(grid, stats, cfg)
    if args.no_timestamp:
        for r in rows:
            r["runtime_ms"] = float("nan")
    text = format_rows(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        summary = {
            "command": "montecarlo",
            "version": __version__,
            "status": "ok",
            "runs": args.runs,
            "mean_error_probability": [
                {"scheme": k[0], "T": k[1], **({"threshold": k[2]} if len(k) > 2 else {}), "value": v}
                for k, v in summarize(rows).items()
            ],
        }
        if "map" in args.schemes:
            summary["roc"] = {
                str(T): [{"threshold": t, "fpr": f, "tpr": p} for t, f, p in roc_points(rows, T)] for T in args.T
            }
        Path(args.out).with_suffix(".summary.json").write_text(
            json.dumps(_jsonable(_stamp(summary, args, started)), indent=2) + "\n", encoding="utf-8"
        )
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridverify", description="Verify energized distribution lines from voltage data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize voltage magnitudes for a known topology")
    _add_common(p, data=False)
    p.add_argument("--status", default=None, help="true line statuses (line_id,status); random forest if omitted")
    p.add_argument("--L", type=int, default=None, help="line count for a random topology")
    p.add_argument("--T", type=int, required=True, help="number of differential samples (file has T+1 rows)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="maximum-likelihood line verification")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--model", choices=(DETAILED, SIMPLIFIED), default=DETAILED)
    p.add_argument("--solver", choices=("pgd", "fw"), default="pgd")
    p.add_argument("--convex-solver", choices=("pgd", "fw"), default="pgd", help="solver for the convex initialization")
    p.add_argument("--rounding", choices=("topl", "forest", "bernoulli"), default="topl")
    p.add_argument("--bernoulli-samples", type=int, default=2000)
    p.add_argument("--truth", default=None, help="true statuses for error metrics")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("verify-map", help="maximum a-posteriori verification with line priors")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--model", choices=(DETAILED, SIMPLIFIED), default=DETAILED)
    p.add_argument("--priors", default=None, help="line_id,prior CSV (falls back to the grid's prior column, then 1/2)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", type=_csv_floats, default=DEFAULT_THRESHOLDS, help="thresholds for the ROC table")
    p.add_argument("--init", choices=("uniform", "random"), default="random")
    p.add_argument("--truth", default=None)
    p.set_defaults(func=cmd_verify_map)

    p = sub.add_parser("baselines", help="random admissible topology and inverse-covariance baseline")
    _add_common(p)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--truth", default=None)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("montecarlo", help="repeated random-topology experiments, CSV result table")
    _add_common(p, data=False)
    _add_solver(p)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--T", type=_csv_ints, default=(10, 50, 200, 500))
    p.add_argument("--schemes", type=lambda s: tuple(t for t in s.split(",") if t), default=("ml_detailed", "random"))
    p.add_argument("--convex-solver", choices=("pgd", "fw"), default="pgd")
    p.add_argument("--rounding", choices=("topl", "forest", "bernoulli"), default="topl")
    p.add_argument("--thresholds", type=_csv_floats, default=DEFAULT_THRESHOLDS)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def _fail(args, exc: Exception, code: int) -> int:
    print(f"gridverify: error: {exc}", file=sys.stderr)
    payload = {
        "command": getattr(args, "command", None),
        "status": "error",
        "error_code": getattr(exc, "code", "error"),
        "message": str(exc),
        "exit_code": code,
    }
    out = getattr(args, "out", None)
    try:
        _write_json(payload, Path(out) if out else None)
    except OSError:
        _write_json(payload, None)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StepSizeCollapse as exc:
        return _fail(args, exc, EXIT_SOLVER)
    except (InputError, OSError) as exc:
        return _fail(args, exc, EXIT_INPUT)
    except GridVerifyError as exc:
        return _fail(args, exc, EXIT_SOLVER)


if __name__ == "__main__":
    sys.exit(main())
