"""Negative log-likelihoods, MAP objectives and their exact gradients.

Singular topologies are encoded as an objective value of ``+inf`` so solvers
can back off instead of crashing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from ._linalg import Cholesky
from .errors import SingularTopology
from .grid import GridModel
from .ldf import MODES, RADIAL, contract_derivatives, rx
from .stats import InjectionStatistics, VoltageDataset, model_covariance_detailed, sigma_alpha_factor

DETAILED = "detailed"
SIMPLIFIED = "simplified"
MAP_DETAILED = "map_detailed"
MAP_SIMPLIFIED = "map_simplified"
KINDS = (DETAILED, SIMPLIFIED, MAP_DETAILED, MAP_SIMPLIFIED)


def prior_log_odds(priors):
    """beta_l = log((1 - pi_l) / pi_l); infinite for pi in {0, 1}."""
    p = np.asarray(priors, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(-p) - np.log(p)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Everything needed to evaluate one objective over line indicators ``b``.

    For MAP kinds ``fixed`` holds the clamped value of every line whose prior
    is exactly 0 or 1 (NaN marks a free line); those entries are overwritten
    before evaluation and carry zero gradient.
    """

    kind: str
    grid: GridModel
    stats: InjectionStatistics
    dataset: VoltageDataset
    beta: np.ndarray | None = None
    fixed: np.ndarray | None = None
    mode: str = RADIAL
    T: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.is_map != (self.beta is not None):
            raise ValueError("beta must be given exactly for MAP objectives")
        if self.stats.N != self.grid.N or self.dataset.sample_cov.shape != (self.grid.N, self.grid.N):
            raise ValueError("statistics / data dimension does not match the grid")
        if self.T is None:
            object.__setattr__(self, "T", self.dataset.T)
        if self.is_map:
            fixed = np.full(self.grid.Le, np.nan) if self.fixed is None else np.asarray(self.fixed, dtype=float)
            beta = np.where(np.isnan(fixed), np.asarray(self.beta, dtype=float), 0.0)
            if not np.all(np.isfinite(beta)):
                raise ValueError("infinite log-odds on a free line; clamp it through `fixed` instead")
            object.__setattr__(self, "fixed", fixed)
            object.__setattr__(self, "beta", beta)

    @property
    def is_map(self) -> bool:
        return self.kind in (MAP_DETAILED, MAP_SIMPLIFIED)

    @property
    def base_kind(self) -> str:
        return SIMPLIFIED if self.kind in (SIMPLIFIED, MAP_SIMPLIFIED) else DETAILED

    @property
    def is_convex(self) -> bool:
        return self.base_kind == SIMPLIFIED

    @property
    def free(self) -> np.ndarray:
        if self.fixed is None:
            return np.ones(self.grid.Le, dtype=bool)
        return np.isnan(self.fixed)

    def with_kind(self, kind: str, **changes) -> "ObjectiveSpec":
        fields = dict(kind=kind, grid=self.grid, stats=self.stats, dataset=self.dataset, mode=self.mode, T=self.T)
        if kind in (MAP_DETAILED, MAP_SIMPLIFIED):
            fields.update(beta=self.beta, fixed=self.fixed)
        fields.update(changes)
        return ObjectiveSpec(**fields)

    def apply_fixed(self, b):
        b = np.asarray(b, dtype=float)
        if self.fixed is None:
            return b
        return np.where(np.isnan(self.fixed), b, self.fixed)

    def value(self, b) -> float:
        return self.value_and_gradient(b, need_grad=False)[0]

    def gradient(self, b) -> np.ndarray:
        val, grad = self.value_and_gradient(b)
        if grad is None:
            raise SingularTopology("objective is infinite at this b")
        return grad

    @cached_property
    def _base_offset(self) -> float:
        # log|S_hat| + N is the minimum of the detailed NLL over all covariances
        if self.base_kind != DETAILED:
            return 0.0
        try:
            return Cholesky(self.dataset.sample_cov).logdet() + self.grid.N
        except np.linalg.LinAlgError:
            return 0.0

    @property
    def offset(self) -> float:
        """Constant subtracted by ``value_and_gradient(..., relative=True)``."""
        return 0.5 * self.T * self._base_offset if self.is_map else self._base_offset

    def value_and_gradient(self, b, need_grad=True, relative=False):
        """(value, gradient) from one factorization; gradient is None when value is inf.

        With ``relative`` the value is ``f(b) - offset``, evaluated so that it
        keeps full relative precision close to a perfect fit.
        """
        b = self.apply_fixed(b)
        if self.base_kind == DETAILED:
            val, grad = _detailed(self, b, need_grad, relative and self._base_offset != 0.0)
        else:
            val, grad = _simplified(self, b, need_grad)
        if not self.is_map:
            return val, grad
        half_t = 0.5 * self.T
        val = half_t * val + float(self.beta @ b) if np.isfinite(val) else val
        if grad is not None:
            grad = np.where(self.free, half_t * grad + self.beta, 0.0)
        return val, grad


def map_spec(grid, stats, dataset, priors, *, simplified=False, mode=RADIAL, T=None) -> ObjectiveSpec:
    """MAP objective with per-line priors (NaN entries mean no prior, i.e. 1/2)."""
    pi = np.asarray(priors, dtype=float)
    pi = np.where(np.isnan(pi), 0.5, pi)
    fixed = np.where((pi == 0.0) | (pi == 1.0), pi, np.nan)
    beta = np.where(np.isnan(fixed), prior_log_odds(np.clip(pi, 1e-300, 1 - 1e-16)), 0.0)
    kind = MAP_SIMPLIFIED if simplified else MAP_DETAILED
    return ObjectiveSpec(kind, grid, stats, dataset, beta=beta, fixed=fixed, mode=mode, T=T)


def _detailed(spec: ObjectiveSpec, b, need_grad, relative=False):
    try:
        ldf = rx(spec.grid, b, spec.mode)
        Sigma = model_covariance_detailed(ldf, spec.stats)
        chol = Cholesky(Sigma)
    except (SingularTopology, np.linalg.LinAlgError):
        return np.inf, None
    S_hat = spec.dataset.sample_cov
    val = chol.logdet() + np.trace(chol.solve(S_hat))
    if relative:
        # eigenvalues mu of Sigma^-1 (S_hat - Sigma) give f - offset = sum(mu - log(1 + mu))
        half = scipy.linalg.solve_triangular(chol.c, S_hat - Sigma, trans="T", check_finite=False)
        mu = np.linalg.eigvalsh(scipy.linalg.solve_triangular(chol.c, half.T, trans="T", check_finite=False))
        val = float(np.sum(mu - np.log1p(mu))) if mu.min() > -1.0 else val - spec._base_offset
    if not need_grad:
        return val, None
    # F = Sigma^-1 - Sigma^-1 S_hat Sigma^-1, formed from the residual to avoid cancellation near a fit
    SinvD = chol.solve(Sigma - S_hat)
    F = chol.solve(SinvD.T)
    F = 0.5 * (F + F.T)
    st = spec.stats
    P = F @ ldf.R @ st.Sigma_p + st.Sigma_pq @ ldf.X @ F
    Q = F @ ldf.X @ st.Sigma_q + F @ ldf.R @ st.Sigma_pq
    return val, contract_derivatives(spec.grid, ldf, P, Q)


def _simplified(spec: ObjectiveSpec, b, need_grad):
    grid = spec.grid
    A = grid.incidence_reduced
    Y = 0.5 * (A.T * (b / grid.x)) @ A  # X^-1(b)
    try:
        chol = Cholesky(Y)
    except np.linalg.LinAlgError:
        return np.inf, None
    sa = sigma_alpha_factor(spec.stats)
    S_hat = spec.dataset.sample_cov
    SaY = sa.solve(Y)  # Sigma_alpha^-1 X^-1
    val = -2.0 * chol.logdet() + np.sum((Y @ SaY).T * S_hat)
    if not need_grad:
        return val, None
    M = SaY @ S_hat - chol.inv()
    return val, np.einsum("li,ij,lj->l", A, M, A) / grid.x


# -- functional API -------------------------------------------------------------


def eval_f(spec: ObjectiveSpec, b) -> float:
    return spec.with_kind(DETAILED).value(b)


def grad_f(spec: ObjectiveSpec, b) -> np.ndarray:
    return spec.with_kind(DETAILED).gradient(b)


def eval_ftilde(spec: ObjectiveSpec, b) -> float:
    return spec.with_kind(SIMPLIFIED).value(b)


def grad_ftilde(spec: ObjectiveSpec, b) -> np.ndarray:
    return spec.with_kind(SIMPLIFIED).gradient(b)


def eval_map(spec: ObjectiveSpec, b) -> float:
    if not spec.is_map:
        raise ValueError("not a MAP objective")
    return spec.value(b)


def grad_map(spec: ObjectiveSpec, b) -> np.ndarray:
    if not spec.is_map:
        raise ValueError("not a MAP objective")
    return spec.gradient(b)


def ml_spec(grid: GridModel, stats: InjectionStatistics, dataset: VoltageDataset, *, simplified=False, mode=RADIAL):
    return ObjectiveSpec(SIMPLIFIED if simplified else DETAILED, grid, stats, dataset, mode=mode)
