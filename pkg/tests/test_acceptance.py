"""Acceptance suite: one test per numbered criterion.

Every test carries a ``criterion`` marker; conftest turns the outcomes into a
PASS/FAIL line per criterion at the end of the session.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import active_set_projection, random_dataset, random_grid, random_stats, tree_indicator
from gridverify.evaluation import MonteCarloConfig, monte_carlo, random_topology, rank_of_thresholds, roc_points, summarize
from gridverify.grid import GridModel, support_rank_ok
from gridverify.ldf import MESHED, RADIAL, rx, rx_meshed, rx_radial
from gridverify.likelihood import eval_f, eval_ftilde, grad_f, grad_ftilde, map_spec, ml_spec
from gridverify.rounding import round_spanning_forest, top_l
from gridverify.solve import SolverConfig, frank_wolfe, pgd, project_capped_simplex, solve_ml_detailed
from gridverify.stats import (
    InjectionStatistics,
    VoltageDataset,
    model_covariance_detailed,
    rng_for,
    sample_covariance,
    simulate_voltages,
)

T_GRID = (10, 50, 200, 500)


def central_difference(fun, b, h=1e-6):
    out = np.empty_like(b)
    for i in range(b.size):
        e = np.zeros_like(b)
        e[i] = h
        out[i] = (fun(b + e) - fun(b - e)) / (2 * h)
    return out


def ensemble(grid, stats, b_true, T=500):
    return VoltageDataset.from_covariance(model_covariance_detailed(rx(grid, b_true), stats), T)


def exact_simplified_twin(grid, stats):
    """Same buses, lines and reactances with r = alpha x and no measurement noise."""
    twin = GridModel.from_edges(
        grid.n_total, grid.endpoints, stats.alpha * grid.x, grid.x, substations=grid.substations, switchable=grid.switchable
    )
    return twin, InjectionStatistics(stats.Sigma_p, stats.Sigma_q, stats.Sigma_pq, 0.0, stats.alpha)


def fixture_topologies(grid, count, seed=0):
    return [random_topology(grid, rng_for(seed, k)) for k in range(count)]


@pytest.fixture(scope="module")
def monte_carlo_25(twofeeder25, twofeeder25_stats):
    cfg = MonteCarloConfig(
        runs=30, T_grid=T_GRID, schemes=("ml_detailed", "random"), solver=SolverConfig(max_iters=3000), seed=0
    )
    t0 = time.perf_counter()
    rows = monte_carlo(twofeeder25, twofeeder25_stats, cfg)
    return rows, time.perf_counter() - t0


@pytest.mark.criterion(1, "gradients match central differences")
def test_gradients_against_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        subs = tuple(range(int(rng.integers(1, 3))))
        N = int(rng.integers(2, 11))
        g = random_grid(rng, N + len(subs), int(rng.integers(0, 5)), substations=subs)
        stats = random_stats(rng, g.N)
        ds = random_dataset(rng, g.N)
        b = rng.uniform(0.2, 1.0, g.Le)
        for mode in (RADIAL, MESHED):
            spec = ml_spec(g, stats, ds, mode=mode)
            fd = central_difference(lambda v: eval_f(spec, v), b)
            worst = max(worst, np.linalg.norm(grad_f(spec, b) - fd) / np.linalg.norm(fd))
        spec = ml_spec(g, stats, ds, simplified=True)
        fd = central_difference(lambda v: eval_ftilde(spec, v), b)
        worst = max(worst, np.linalg.norm(grad_ftilde(spec, b) - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-5, f"worst relative error {worst:.3g}"
    assert elapsed < 30.0


@pytest.mark.criterion(2, "asymptotic recovery on the 8-bus fixture")
def test_asymptotic_recovery(feeder8, feeder8_stats):
    g, stats = feeder8, feeder8_stats
    L = g.N
    binaries = [np.isin(np.arange(g.Le), idx).astype(float) for idx in itertools.combinations(range(g.Le), L)]
    for bt in fixture_topologies(g, 5):
        ds = ensemble(g, stats, bt)
        spec = ml_spec(g, stats, ds)
        assert np.abs(grad_f(spec, bt)).max() < 1e-8
        values = np.array([eval_f(spec, b) for b in binaries])
        np.testing.assert_array_equal(binaries[int(np.argmin(values))], bt)
        assert eval_f(spec, bt) <= values.min()
        rounder = lambda b: top_l(b, L)  # noqa: E731
        res = solve_ml_detailed(g, stats, ds, SolverConfig(max_iters=3000), rounder=rounder)
        np.testing.assert_array_equal(rounder(res.b_relaxed), bt)


@pytest.mark.criterion(3, "PGD and Frank-Wolfe agree; FW gap")
def test_convex_solvers_agree(feeder8, feeder8_stats):
    bt = fixture_topologies(feeder8, 1, seed=3)[0]
    g, stats = exact_simplified_twin(feeder8, feeder8_stats)
    spec = ml_spec(g, stats, ensemble(g, stats, bt), simplified=True)
    fw = frank_wolfe(spec, SolverConfig(max_iters=500, tol=1e-12))
    ref = pgd(spec, SolverConfig(max_iters=5000, tol=1e-12))
    assert fw.iterations_used <= 500
    assert min(fw.gap_trace) >= 0.0
    assert min(fw.gap_trace) < 1e-3
    assert fw.objective == pytest.approx(ref.objective, rel=1e-4)

    # the same agreement on sampled data from the noisy fixture
    ds = sample_covariance(simulate_voltages(feeder8, bt, feeder8_stats, 500, 17))
    noisy = ml_spec(feeder8, feeder8_stats, ds, simplified=True)
    fw = frank_wolfe(noisy, SolverConfig(max_iters=20000, tol=1e-6))
    ref = pgd(noisy, SolverConfig(max_iters=5000, tol=1e-12))
    assert min(fw.gap_trace) >= 0.0
    assert fw.objective == pytest.approx(ref.objective, rel=1e-4)


@pytest.mark.criterion(4, "capped-simplex projection matches active-set enumeration")
def test_projection_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 7))
        L = int(rng.integers(0, n + 1))
        y = rng.normal(0.5, 2.0, n)
        np.testing.assert_allclose(project_capped_simplex(y, L), active_set_projection(y, L), atol=1e-8, rtol=0)


@pytest.mark.criterion(5, "error probability falls with T on the 25-bus fixture")
def test_statistical_performance(monte_carlo_25):
    rows, elapsed = monte_carlo_25
    assert {r["status"] for r in rows} == {"ok"}
    mean = summarize(rows)
    ml = [mean[("ml_detailed", T)] for T in T_GRID]
    assert all(a > b for a, b in zip(ml, ml[1:])), ml
    assert ml[-1] == 0.0
    for T in T_GRID[1:]:
        assert mean[("ml_detailed", T)] < mean[("random", T)]
    assert elapsed < 300.0


@pytest.mark.criterion(6, "simplified and detailed models agree when r = alpha x")
def test_simplified_detailed_consistency():
    rng = np.random.default_rng(6)
    alpha = 1.7
    x = rng.uniform(0.01, 0.05, 4)
    g = GridModel.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)], alpha * x, x)
    stats = random_stats(rng, g.N, noise=0.0).with_alpha(alpha)
    spec = ml_spec(g, stats, random_dataset(rng, g.N))
    candidates = [np.array(bits) for bits in itertools.product((0.0, 1.0), repeat=g.Le)]
    f = np.array([eval_f(spec, b) for b in candidates])
    ft = np.array([eval_ftilde(spec, b) for b in candidates])
    np.testing.assert_array_equal(np.isinf(f), np.isinf(ft))
    finite = np.isfinite(f)
    assert finite.sum() >= 4
    df = f[finite][:, None] - f[finite][None, :]
    dft = ft[finite][:, None] - ft[finite][None, :]
    scale = np.abs(f[finite]).max()
    np.testing.assert_allclose(df, dft, atol=1e-10 * scale)
    assert np.array_equal(np.argsort(f[finite], kind="stable"), np.argsort(ft[finite], kind="stable"))
    for b in np.array(candidates)[finite]:
        X = rx(g, b).X
        Sigma = model_covariance_detailed(rx(g, b), stats)
        expected = X @ stats.Sigma_alpha @ X
        assert np.abs(Sigma - expected).max() <= 1e-10 * np.abs(expected).max()


@pytest.mark.criterion(7, "meshed model reduces to the radial one on trees")
def test_meshed_reduces_on_trees():
    rng = np.random.default_rng(7)
    for k in range(50):
        subs = (0,) if k % 2 else (0, 1)
        g = random_grid(rng, int(rng.integers(4, 16)), int(rng.integers(0, 5)), substations=subs)
        b = tree_indicator(g, rng)
        meshed, radial = rx_meshed(g, b), rx_radial(g, b)
        for a, c in ((meshed.R, radial.R), (meshed.X, radial.X)):
            assert np.linalg.norm(a - c) <= 1e-8 * np.linalg.norm(c)


@pytest.mark.criterion(8, "MAP clamps, reduces to ML at beta = 0, and sweeps a staircase")
def test_map_behaviour(feeder8, feeder8_stats):
    g, stats = feeder8, feeder8_stats
    tight = SolverConfig(max_iters=5000, tol=1e-20)

    # hard prior of one on a line that is open in the truth
    bt = fixture_topologies(g, 1, seed=8)[0]
    off = int(np.flatnonzero((bt == 0) & g.switchable)[0])
    priors = np.full(g.Le, 0.5)
    priors[off] = 1.0
    ds = sample_covariance(simulate_voltages(g, bt, stats, 200, 8))
    spec = map_spec(g, stats, ds, priors)
    res = pgd(spec, SolverConfig(max_iters=3000))
    assert res.b_relaxed[off] == 1.0
    assert all(b[off] == 1.0 for b in rank_of_thresholds(res.b_relaxed, np.linspace(0.05, 0.95, 19), spec.fixed))

    # uniform priors give beta = 0: the box-relaxed MAP point is the ML relaxed point
    for bt in fixture_topologies(g, 5):
        ds = ensemble(g, stats, bt)
        ml = solve_ml_detailed(g, stats, ds, tight).b_relaxed
        spec = map_spec(g, stats, ds, np.full(g.Le, 0.5))
        assert not spec.beta.any()
        assert np.abs(pgd(spec, tight).b_relaxed - ml).max() <= 1e-6

    # threshold sweep: nested estimates and a monotone ROC staircase
    cfg = MonteCarloConfig(runs=6, T_grid=(50, 200), schemes=("map",), solver=SolverConfig(max_iters=3000), seed=8)
    rows = monte_carlo(g, stats, cfg)
    assert {r["status"] for r in rows} == {"ok"}
    for T in cfg.T_grid:
        pts = roc_points(rows, T)
        assert [p[0] for p in pts] == list(cfg.thresholds)
        fpr, tpr = np.array([p[1] for p in pts]), np.array([p[2] for p in pts])
        assert np.all((0 <= fpr) & (fpr <= 1) & (0 <= tpr) & (tpr <= 1))
        assert np.all(np.diff(fpr) <= 0) and np.all(np.diff(tpr) <= 0)
    sweep = rank_of_thresholds(res.b_relaxed, cfg.thresholds, spec.fixed)
    assert all(np.all(hi <= lo) for lo, hi in zip(sweep, sweep[1:]))


@pytest.mark.criterion(9, "rounding never beats the relaxation; forests are admissible")
def test_rounding_guarantees(monte_carlo_25, feeder8, feeder8_stats, twofeeder25, twofeeder25_stats):
    rows, _ = monte_carlo_25
    forest_cfg = MonteCarloConfig(
        runs=10, T_grid=T_GRID, schemes=("ml_detailed",), rounding="forest", solver=SolverConfig(max_iters=3000), seed=9
    )
    rows = rows + monte_carlo(twofeeder25, twofeeder25_stats, forest_cfg)
    ml_rows = [r for r in rows if r["scheme"] == "ml_detailed"]
    assert len(ml_rows) == (30 + 10) * len(T_GRID)
    for r in ml_rows:
        assert r["objective_relaxed"] <= r["objective_binary"], r

    rng = np.random.default_rng(9)
    for g in (feeder8, twofeeder25):
        for _ in range(200):
            rep = round_spanning_forest(g, rng.random(g.Le))
            assert rep.feasible and support_rank_ok(g, rep.b_binary)
    for _ in range(100):
        g = random_grid(rng, int(rng.integers(3, 14)), int(rng.integers(0, 6)), substations=(0, 1))
        assert support_rank_ok(g, round_spanning_forest(g, rng.uniform(0, 1, g.Le)).b_binary)
