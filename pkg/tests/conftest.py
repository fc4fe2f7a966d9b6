from __future__ import annotations

import itertools
from importlib import resources

import numpy as np
import pytest

from gridverify.grid import GridModel, load_grid
from gridverify.stats import InjectionStatistics, VoltageDataset, load_stats

DATA = resources.files("gridverify") / "data"


def random_tree_edges(rng, n_total, substations=(0,)):
    """Random forest in which every load bus hangs below exactly one substation."""
    subs = list(substations)
    loads = [i for i in range(n_total) if i not in substations]
    rng.shuffle(loads)
    placed = list(subs)
    edges = []
    for v in loads:
        u = placed[rng.integers(len(placed))]
        edges.append((int(u), int(v)))
        placed.append(v)
    return edges


def random_grid(rng, n_total, n_extra=0, substations=(0,), switchable=None):
    """Connected candidate set: a random spanning forest plus ``n_extra`` distinct extra lines."""
    edges = random_tree_edges(rng, n_total, substations)
    have = {frozenset(e) for e in edges}
    tries = 0
    while len(edges) < n_total - len(substations) + n_extra and tries < 1000:
        tries += 1
        u, v = (int(t) for t in rng.choice(n_total, 2, replace=False))
        if frozenset((u, v)) in have or (u in substations and v in substations):
            continue
        have.add(frozenset((u, v)))
        edges.append((u, v))
    order = rng.permutation(len(edges))
    edges = [edges[i] for i in order]
    x = rng.uniform(0.01, 0.05, len(edges))
    r = x * rng.uniform(0.5, 2.0, len(edges))
    return GridModel.from_edges(n_total, edges, r, x, substations=substations, switchable=switchable)


def tree_indicator(grid: GridModel, rng):
    """Indicator of a random spanning forest inside the candidate set."""
    from gridverify.rounding import spanning_forest

    return spanning_forest(grid, rng.random(grid.Le))


def random_spd(rng, n, scale=1.0, cond=20.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = scale * np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * eig) @ Q.T


def random_stats(rng, N, noise=1e-3, full=True):
    if full:
        J = random_spd(rng, 2 * N, 1e-4)
        return InjectionStatistics(J[:N, :N], J[N:, N:], J[:N, N:], noise**2, 1.3)
    sp = rng.uniform(0.5, 1.5, N) * 1e-4
    sq = sp * rng.uniform(0.1, 0.3, N)
    return InjectionStatistics(sp, sq, 0.5 * np.sqrt(sp * sq), noise**2, 1.3)


def random_dataset(rng, N, scale=1e-6, T=100):
    return VoltageDataset.from_covariance(random_spd(rng, N, scale), T)


def active_set_projection(y, L):
    """Brute force: every coordinate is at 0, at 1, or free; keep the closest feasible candidate."""
    n = y.size
    best, best_d = None, np.inf
    for states in itertools.product((0, 1, 2), repeat=n):
        s = np.array(states)
        free = s == 2
        b = np.where(s == 1, 1.0, 0.0)
        if free.any():
            lam = (y[free].sum() + (s == 1).sum() - L) / free.sum()
            b[free] = y[free] - lam
            if b[free].min() < -1e-12 or b[free].max() > 1 + 1e-12:
                continue
        elif (s == 1).sum() != L:
            continue
        d = np.sum((b - y) ** 2)
        if d < best_d:
            best, best_d = b, d
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def feeder8():
    return load_grid(DATA / "feeder8.csv")


@pytest.fixture(scope="session")
def feeder8_stats(feeder8):
    return load_stats(DATA / "feeder8_stats.json", feeder8)


@pytest.fixture(scope="session")
def twofeeder25():
    return load_grid(DATA / "twofeeder25.csv")


@pytest.fixture(scope="session")
def twofeeder25_stats(twofeeder25):
    return load_stats(DATA / "twofeeder25_stats.json", twofeeder25)


# -- acceptance verdicts -----------------------------------------------------------

_VERDICTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return
    number, title = marker.args
    ok = report.passed and _VERDICTS.get(number, (title, True))[1]
    if report.when == "call" or not report.passed:
        _VERDICTS[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
