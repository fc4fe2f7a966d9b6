"""Regenerate the shipped fixture grids and injection statistics.

    python scripts/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

from gridverify.grid import Bus, GridModel, Line, save_grid

DATA = Path(__file__).resolve().parents[1] / "src" / "gridverify" / "data"


def build(name, n_total, subs, tree, extra, switchable_tree, seed):
    rng = np.random.default_rng(seed)
    edges = tree + extra
    x = rng.uniform(0.01, 0.04, len(edges))
    r = x * rng.uniform(0.8, 2.0, len(edges))  # r/x spread like real feeders
    sw = [e in extra or e in switchable_tree for e in edges]
    prefix = {s: "s" for s in subs}
    buses = [Bus(i, i in subs, f"{prefix.get(i, 'n')}{i}") for i in range(n_total)]
    lines = [
        Line(i, u, v, round(float(r[i]), 5), round(float(x[i]), 5), None, sw[i], f"l{i}")
        for i, (u, v) in enumerate(edges)
    ]
    grid = GridModel(tuple(buses), tuple(lines), name=name)
    save_grid(grid, DATA / f"{name}.csv")
    return grid


def stats(grid, seed, noise_std):
    rng = np.random.default_rng(seed)
    sp = rng.uniform(0.5, 1.5, grid.N) * 1e-5  # (0.003 pu)^2 scale
    pf_q = rng.uniform(0.3, 0.5, grid.N)  # q~ std as a fraction of p~ std
    sq = sp * pf_q**2
    spq = 0.5 * np.sqrt(sp * sq)  # correlation 0.5
    obj = {
        "sigma_p": [round(v, 8) for v in sp],
        "sigma_q": [round(v, 8) for v in sq],
        "sigma_pq": [round(v, 8) for v in spq],
        "sigma_n2": noise_std**2,
    }
    (DATA / f"{grid.name}_stats.json").write_text(json.dumps(obj, indent=1) + "\n")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    g8 = build(
        "feeder8",
        8,
        {0},
        tree=[(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7)],
        extra=[(4, 7), (2, 6), (0, 5)],
        switchable_tree=[(3, 4), (6, 7), (1, 5), (5, 6)],
        seed=8,
    )
    stats(g8, 18, NOISE_STD)
    g25 = build(
        "twofeeder25",
        25,
        {0, 1},
        tree=[
            (0, 2), (2, 3), (3, 4), (4, 5), (3, 6), (6, 7), (7, 8), (2, 9), (9, 10), (10, 11), (9, 12), (12, 13),
            (1, 14), (14, 15), (15, 16), (16, 17), (15, 18), (18, 19), (14, 20), (20, 21), (21, 22), (20, 23),
            (23, 24),
        ],
        extra=[(5, 8), (11, 13), (8, 17), (13, 24), (17, 19), (22, 24), (4, 10)],
        switchable_tree=[(4, 5), (7, 8), (10, 11), (12, 13), (16, 17), (18, 19), (21, 22), (23, 24), (3, 4), (9, 10)],
        seed=25,
    )
    stats(g25, 35, NOISE_STD)


NOISE_STD = 6e-4

if __name__ == "__main__":
    main()
