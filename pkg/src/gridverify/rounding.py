"""Map a relaxed indicator vector to a binary topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedInfrastructure
from .grid import GridModel, support_rank_ok
from .likelihood import ObjectiveSpec
from .stats import rng_for


@dataclass
class RoundingReport:
    b_binary: np.ndarray
    method: str
    objective_at_binary: float = np.nan
    feasible: bool | None = None
    samples_drawn: int = 0


def _report(b, method, objective, grid, samples=0):
    grid = grid if grid is not None else (objective.grid if objective is not None else None)
    feasible = support_rank_ok(grid, b) if grid is not None else None
    val = objective.value(b) if objective is not None else np.nan
    return RoundingReport(b, method, val, feasible, samples)


def top_l(b_relaxed, L) -> np.ndarray:
    """Ones at the L largest entries; ties go to the lowest index."""
    b_relaxed = np.asarray(b_relaxed, dtype=float)
    if not 0 <= L <= b_relaxed.size:
        raise ValueError(f"L={L} outside [0, {b_relaxed.size}]")
    out = np.zeros(b_relaxed.size)
    out[np.argsort(-b_relaxed, kind="stable")[:L]] = 1.0
    return out


def round_top_l(b_relaxed, L, objective: ObjectiveSpec | None = None, grid: GridModel | None = None):
    return _report(top_l(b_relaxed, L), "topL", objective, grid)


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        self.parent[max(ri, rj)] = min(ri, rj)
        return True


def spanning_forest(grid: GridModel, weights, L: int | None = None) -> np.ndarray:
    """Maximum-weight spanning forest with all substations merged into one root.

    Kruskal over lines sorted by decreasing weight (ties: lowest index).  If
    ``L`` exceeds the forest size, the highest-weight unused lines are added
    greedily.
    """
    weights = np.asarray(weights, dtype=float)
    root = grid.substations[0]
    node = np.array([root if grid.buses[i].is_substation else i for i in range(grid.n_total)])
    order = np.argsort(-weights, kind="stable")
    ds = _DisjointSet(grid.n_total)
    chosen = np.zeros(grid.Le)
    for ln in order:
        u, v = grid.endpoints[ln]
        if ds.union(node[u], node[v]):
            chosen[ln] = 1.0
    if chosen.sum() != grid.N:
        raise DisconnectedInfrastructure("candidate lines do not span every bus")
    if L is not None and L > grid.N:
        extra = [ln for ln in order if chosen[ln] == 0.0][: L - grid.N]
        chosen[extra] = 1.0
    return chosen


def round_spanning_forest(grid: GridModel, b_relaxed, objective: ObjectiveSpec | None = None, L: int | None = None):
    return _report(spanning_forest(grid, b_relaxed, L), "spanning_forest", objective, grid)


def round_bernoulli(grid: GridModel, b_relaxed, objective: ObjectiveSpec, M: int, seed: int, L: int | None = None):
    """Draw M configurations with P(b_l = 1) = b_relaxed_l and keep the best feasible one.

    Draws violating the cardinality L or the connectivity requirement are
    discarded; without any feasible draw the result falls back to top-L.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    L = grid.N if L is None else L
    p = np.clip(np.asarray(b_relaxed, dtype=float), 0.0, 1.0)
    draws = (rng_for(seed, 11).random((M, grid.Le)) < p).astype(float)
    draws = draws[draws.sum(axis=1) == L]
    best, best_val = None, np.inf
    seen = set()
    for b in draws:
        key = b.tobytes()
        if key in seen:
            continue
        seen.add(key)
        if not support_rank_ok(grid, b):
            continue
        val = objective.value(b)
        if val < best_val:
            best, best_val = b, val
    if best is None:
        rep = round_top_l(b_relaxed, L, objective, grid)
        rep.method = "bernoulli"
        rep.samples_drawn = M
        return rep
    return RoundingReport(best, "bernoulli", best_val, True, M)
