"""Injection statistics, model covariances and voltage data handling.

Differential data are formed from raw meter magnitudes by squaring and taking
first differences.  The sample covariance is the plain average of outer
products, **without** mean subtraction, because the increments are modelled
as zero-mean.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._linalg import Cholesky, symmetrize
from .errors import InsufficientData, SingularSigmaAlpha, StatsFormatError
from .grid import GridModel
from .ldf import RADIAL, LdfMatrices, rx


@dataclass(frozen=True)
class InjectionStatistics:
    """Second-order model of differential injections (p~, q~) and noise."""

    Sigma_p: np.ndarray
    Sigma_q: np.ndarray
    Sigma_pq: np.ndarray
    sigma_n2: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        n = None
        for name in ("Sigma_p", "Sigma_q", "Sigma_pq"):
            m = np.array(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = np.diag(m)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise StatsFormatError(f"{name} must be a square matrix or a diagonal vector")
            if n is not None and m.shape[0] != n:
                raise StatsFormatError(f"{name} has size {m.shape[0]}, expected {n}")
            n = m.shape[0]
            m.flags.writeable = False
            object.__setattr__(self, name, m)
        for name in ("Sigma_p", "Sigma_q"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, rtol=1e-10, atol=1e-14):
                raise StatsFormatError(f"{name} is not symmetric")
        if not self.sigma_n2 >= 0:
            raise StatsFormatError("sigma_n2 must be nonnegative")
        if not self.alpha > 0:
            raise StatsFormatError("alpha must be positive")
        lam_min = np.linalg.eigvalsh(self.joint_covariance).min()
        scale = max(np.abs(self.joint_covariance).max(), 1e-300)
        if lam_min < -1e-10 * scale:
            raise StatsFormatError("joint covariance of (p, q) increments is not positive semidefinite")
        object.__setattr__(self, "sigma_n2", float(self.sigma_n2))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def N(self) -> int:
        return self.Sigma_p.shape[0]

    @property
    def joint_covariance(self) -> np.ndarray:
        """2N x 2N covariance of the stacked vector (p~, q~)."""
        return np.block([[self.Sigma_p, self.Sigma_pq], [self.Sigma_pq.T, self.Sigma_q]])

    @property
    def Sigma_alpha(self) -> np.ndarray:
        a = self.alpha
        return symmetrize(a * a * self.Sigma_p + self.Sigma_q + a * (self.Sigma_pq + self.Sigma_pq.T))

    def with_alpha(self, alpha: float) -> "InjectionStatistics":
        return InjectionStatistics(self.Sigma_p, self.Sigma_q, self.Sigma_pq, self.sigma_n2, alpha)


@dataclass(frozen=True)
class VoltageDataset:
    """Differential squared-voltage samples, shape (T, N), and their covariance."""

    samples: np.ndarray
    sample_cov: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "samples", s)
        if self.sample_cov is None:
            object.__setattr__(self, "sample_cov", s.T @ s / s.shape[0])

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    @property
    def N(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_covariance(cls, cov, T: int = 1):
        """Dataset standing in for an asymptotic / analytic sample covariance."""
        cov = np.asarray(cov, dtype=float)
        return cls(np.zeros((T, cov.shape[0])), symmetrize(cov))


def model_covariance_detailed(ldf: LdfMatrices, stats: InjectionStatistics) -> np.ndarray:
    R, X = ldf.R, ldf.X
    RSpqX = R @ stats.Sigma_pq @ X
    S = R @ stats.Sigma_p @ R + X @ stats.Sigma_q @ X + RSpqX + RSpqX.T
    return symmetrize(S) + stats.sigma_n2 * np.eye(R.shape[0])


def sigma_alpha_factor(stats: InjectionStatistics) -> Cholesky:
    try:
        return Cholesky(stats.Sigma_alpha)
    except np.linalg.LinAlgError as exc:
        raise SingularSigmaAlpha(f"Sigma_alpha is not positive definite: {exc}") from None


def model_covariance_simplified(ldf: LdfMatrices, stats: InjectionStatistics) -> np.ndarray:
    sigma_alpha_factor(stats)
    X = ldf.X
    return symmetrize(X @ stats.Sigma_alpha @ X)


def sample_covariance(raw_v) -> VoltageDataset:
    """Square magnitudes, difference consecutive rows, average outer products."""
    raw_v = np.asarray(raw_v, dtype=float)
    if raw_v.ndim != 2 or raw_v.shape[0] < 2:
        raise InsufficientData("need at least two voltage snapshots to form one difference")
    if not np.all(raw_v > 0):
        raise InsufficientData("voltage magnitudes must be strictly positive")
    v = raw_v**2
    return VoltageDataset(np.diff(v, axis=0))


def rng_for(seed: int, *stream) -> np.random.Generator:
    """Counter-based generator (Philox) keyed on seed plus an optional stream path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def _psd_sqrt(C):
    w, V = np.linalg.eigh(symmetrize(C))
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_increments(ldf: LdfMatrices, stats: InjectionStatistics, T: int, rng) -> np.ndarray:
    """T x N differential squared voltages R p~ + X q~ + n."""
    N = ldf.R.shape[0]
    z = rng.standard_normal((T, 2 * N)) @ _psd_sqrt(stats.joint_covariance).T
    v = z[:, :N] @ ldf.R.T + z[:, N:] @ ldf.X.T
    if stats.sigma_n2 > 0:
        v += np.sqrt(stats.sigma_n2) * rng.standard_normal((T, N))
    return v


def simulate_voltages(grid: GridModel, b_true, stats: InjectionStatistics, T: int, seed: int, mode: str = RADIAL):
    """(T+1) x N voltage magnitudes from a flat 1 pu start under the LDF model."""
    if T < 1:
        raise InsufficientData("T must be at least 1")
    ldf = rx(grid, b_true, mode)
    dv = simulate_increments(ldf, stats, T, rng_for(seed))
    v = 1.0 + np.vstack([np.zeros((1, grid.N)), np.cumsum(dv, axis=0)])
    if np.any(v <= 0):
        raise InsufficientData("simulated squared voltage became nonpositive; injection variances too large")
    return np.sqrt(v)


# -- files ----------------------------------------------------------------------


def _matrix_field(obj, key, N, required=True):
    if key not in obj:
        if required:
            raise StatsFormatError(f"missing field {key!r}")
        return np.zeros((N, N))
    m = np.asarray(obj[key], dtype=float)
    if m.ndim == 0:
        m = np.full(N, float(m))
    if m.ndim == 1:
        if m.shape[0] != N:
            raise StatsFormatError(f"{key}: expected {N} diagonal entries, got {m.shape[0]}")
        return np.diag(m)
    if m.shape != (N, N):
        raise StatsFormatError(f"{key}: expected a {N}x{N} matrix, got shape {m.shape}")
    return m


STATS_KEYS = {"sigma_p", "sigma_q", "sigma_pq", "sigma_n2", "alpha"}


def parse_stats(obj: dict, grid: GridModel) -> InjectionStatistics:
    """Build statistics from a JSON-like dict.

    Matrix fields accept a full N x N list, a length-N diagonal, or a scalar
    (same variance everywhere).  ``alpha`` defaults to the median r/x ratio of
    the candidate lines.
    """
    if not isinstance(obj, dict):
        raise StatsFormatError("stats file must contain a JSON object")
    unknown = set(obj) - STATS_KEYS
    if unknown:
        raise StatsFormatError(f"unknown field(s) {sorted(unknown)}")
    N = grid.N
    try:
        Sp = _matrix_field(obj, "sigma_p", N)
        Sq = _matrix_field(obj, "sigma_q", N)
        Spq = _matrix_field(obj, "sigma_pq", N, required=False)
        sn2 = float(obj.get("sigma_n2", 0.0))
        alpha = obj.get("alpha")
        alpha = default_alpha(grid) if alpha is None else float(alpha)
    except (TypeError, ValueError) as exc:
        raise StatsFormatError(str(exc)) from None
    return InjectionStatistics(Sp, Sq, Spq, sn2, alpha)


def default_alpha(grid: GridModel) -> float:
    return float(np.median(grid.r / grid.x))


def load_stats(path, grid: GridModel) -> InjectionStatistics:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StatsFormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        return parse_stats(obj, grid)
    except StatsFormatError as exc:
        raise StatsFormatError(f"{path}: {exc}") from None


def stats_digest(stats: InjectionStatistics) -> str:
    h = hashlib.sha256()
    for m in (stats.Sigma_p, stats.Sigma_q, stats.Sigma_pq):
        h.update(np.ascontiguousarray(m, dtype="<f8").tobytes())
    h.update(np.array([stats.sigma_n2, stats.alpha], dtype="<f8").tobytes())
    return h.hexdigest()


def stats_to_json(stats: InjectionStatistics) -> dict:
    def pack(m):
        return np.diag(m).tolist() if np.count_nonzero(m - np.diag(np.diag(m))) == 0 else m.tolist()

    return {
        "sigma_p": pack(stats.Sigma_p),
        "sigma_q": pack(stats.Sigma_q),
        "sigma_pq": pack(stats.Sigma_pq),
        "sigma_n2": stats.sigma_n2,
        "alpha": stats.alpha,
    }


def format_voltages(grid: GridModel, raw_v) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([grid.bus_labels[i] for i in grid.load_buses])
    for row in np.asarray(raw_v):
        w.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def parse_voltages(text: str, grid: GridModel, source: str = "<voltages>") -> np.ndarray:
    """Read a voltage CSV whose header names the non-substation buses (any order)."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise InsufficientData(f"{source}: empty voltage file")
    _, head = rows[0]
    head = [c.strip() for c in head]
    expected = {grid.bus_labels[i] for i in grid.load_buses}
    unknown = [c for c in head if c not in expected]
    if unknown:
        raise StatsFormatError(f"{source}:1: unknown bus column(s) {unknown}")
    missing = sorted(expected - set(head))
    if missing:
        raise StatsFormatError(f"{source}:1: missing bus column(s) {missing}")
    pos = grid.reduced_position()
    order = [pos[grid.bus_index[c]] for c in head]
    data = np.empty((len(rows) - 1, grid.N))
    for k, (lineno, r) in enumerate(rows[1:]):
        if len(r) != len(head):
            raise StatsFormatError(f"{source}:{lineno}: expected {len(head)} fields, got {len(r)}")
        try:
            data[k, order] = [float(c) for c in r]
        except ValueError:
            raise StatsFormatError(f"{source}:{lineno}: non-numeric voltage value") from None
    return data


def load_voltages(path, grid: GridModel) -> np.ndarray:
    path = Path(path)
    return parse_voltages(path.read_text(encoding="utf-8"), grid, source=str(path))
