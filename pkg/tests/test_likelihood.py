import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset, random_grid, random_stats, tree_indicator
from gridverify.errors import SingularTopology
from gridverify.grid import GridModel, support_rank_ok
from gridverify.ldf import MESHED, RADIAL, rx
from gridverify.likelihood import (
    DETAILED,
    MAP_DETAILED,
    SIMPLIFIED,
    ObjectiveSpec,
    eval_f,
    eval_ftilde,
    eval_map,
    grad_f,
    grad_ftilde,
    grad_map,
    map_spec,
    ml_spec,
    prior_log_odds,
)
from gridverify.stats import VoltageDataset, model_covariance_detailed


def fd_gradient(fun, b, h=1e-6):
    g = np.empty_like(b)
    for i in range(b.size):
        e = np.zeros_like(b)
        e[i] = h
        g[i] = (fun(b + e) - fun(b - e)) / (2 * h)
    return g


def gaussian_nll_reference(Sigma, S_hat):
    """log det + trace written with plain numpy, no factorization reuse."""
    sign, logdet = np.linalg.slogdet(Sigma)
    assert sign > 0
    return logdet + np.trace(np.linalg.solve(Sigma, S_hat))


def instance(seed, n_total=7, n_extra=3, noise=1e-3, mode=RADIAL):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, n_total, n_extra)
    stats = random_stats(rng, g.N, noise)
    bt = tree_indicator(g, rng)
    ds = VoltageDataset.from_covariance(model_covariance_detailed(rx(g, bt, mode), stats), 100)
    return rng, g, stats, ds, bt


class TestValues:
    @pytest.mark.parametrize("mode", [RADIAL, MESHED])
    def test_detailed_matches_reference(self, mode):
        rng, g, stats, _, _ = instance(1, mode=mode)
        ds = random_dataset(rng, g.N)
        spec = ml_spec(g, stats, ds, mode=mode)
        b = rng.uniform(0.2, 1.0, g.Le)
        Sigma = model_covariance_detailed(rx(g, b, mode), stats)
        assert eval_f(spec, b) == pytest.approx(gaussian_nll_reference(Sigma, ds.sample_cov), rel=1e-12)

    def test_simplified_matches_reference(self):
        rng, g, stats, _, _ = instance(2)
        ds = random_dataset(rng, g.N)
        spec = ml_spec(g, stats, ds, simplified=True)
        b = rng.uniform(0.2, 1.0, g.Le)
        A = g.incidence_reduced
        Y = 0.5 * A.T @ np.diag(b / g.x) @ A
        ref = -2 * np.linalg.slogdet(Y)[1] + np.trace(Y @ np.linalg.inv(stats.Sigma_alpha) @ Y @ ds.sample_cov)
        assert eval_ftilde(spec, b) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("map_kind", [False, True])
    def test_relative_value_adds_back_to_full(self, map_kind):
        rng, g, stats, ds, bt = instance(5)
        spec = map_spec(g, stats, ds, np.full(g.Le, 0.5)) if map_kind else ml_spec(g, stats, ds)
        b = rng.uniform(0.2, 1.0, g.Le)
        rel, grad = spec.value_and_gradient(b, relative=True)
        assert rel + spec.offset == pytest.approx(spec.value(b), rel=1e-12)
        np.testing.assert_array_equal(grad, spec.gradient(b))
        # a perfect fit sits exactly at the offset, and nearby excess keeps its precision
        assert abs(spec.value_and_gradient(bt, relative=True)[0]) < 1e-14
        e = np.where(bt > 0, -1e-7, 0.0)
        assert spec.value_and_gradient(bt + e, relative=True)[0] > 0

    def test_singular_sample_covariance_has_no_offset(self):
        rng, g, stats, _, _ = instance(6)
        spec = ml_spec(g, stats, VoltageDataset(1e-3 * rng.standard_normal((2, g.N))))
        b = rng.uniform(0.2, 1.0, g.Le)
        assert spec.offset == 0.0
        assert spec.value_and_gradient(b, relative=True)[0] == spec.value(b)

    def test_infeasible_support_is_infinite(self):
        _, g, stats, ds, bt = instance(3)
        spec = ml_spec(g, stats, ds)
        b = bt.copy()
        b[np.flatnonzero(bt)[0]] = 0.0
        assert not support_rank_ok(g, b)
        assert eval_f(spec, b) == np.inf
        assert eval_ftilde(spec, b) == np.inf
        assert spec.value_and_gradient(b) == (np.inf, None)
        with pytest.raises(SingularTopology):
            grad_f(spec, b)

    def test_dimension_mismatch(self):
        _, g, stats, _, _ = instance(4)
        with pytest.raises(ValueError):
            ObjectiveSpec(DETAILED, g, stats, VoltageDataset.from_covariance(np.eye(g.N + 1)))


class TestGradients:
    @pytest.mark.parametrize("mode", [RADIAL, MESHED])
    @pytest.mark.parametrize("seed", range(6))
    def test_detailed_finite_differences(self, mode, seed):
        rng, g, stats, _, _ = instance(seed, mode=mode)
        spec = ml_spec(g, stats, random_dataset(rng, g.N), mode=mode)
        b = rng.uniform(0.2, 1.0, g.Le)
        np.testing.assert_allclose(grad_f(spec, b), fd_gradient(lambda v: eval_f(spec, v), b), rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("seed", range(6))
    def test_simplified_finite_differences(self, seed):
        rng, g, stats, _, _ = instance(seed)
        spec = ml_spec(g, stats, random_dataset(rng, g.N), simplified=True)
        b = rng.uniform(0.2, 1.0, g.Le)
        fd = fd_gradient(lambda v: eval_ftilde(spec, v), b)
        np.testing.assert_allclose(grad_ftilde(spec, b), fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())

    def test_symmetrized_expression_would_be_twice_too_large(self):
        # a_l^T [S^-1 Y Shat + Shat Y S^-1 - 2X] a_l / x_l equals twice the true derivative
        rng, g, stats, _, _ = instance(9)
        ds = random_dataset(rng, g.N)
        spec = ml_spec(g, stats, ds, simplified=True)
        b = rng.uniform(0.2, 1.0, g.Le)
        A = g.incidence_reduced
        Y = 0.5 * A.T @ np.diag(b / g.x) @ A
        Sa_inv = np.linalg.inv(stats.Sigma_alpha)
        M = Sa_inv @ Y @ ds.sample_cov
        sym = np.einsum("li,ij,lj->l", A, M + M.T - 2 * np.linalg.inv(Y), A) / g.x
        np.testing.assert_allclose(sym, 2 * grad_ftilde(spec, b), rtol=1e-9)

    @pytest.mark.parametrize("simplified", [False, True])
    def test_map_finite_differences(self, simplified):
        rng, g, stats, _, _ = instance(11)
        ds = random_dataset(rng, g.N, T=40)
        priors = rng.uniform(0.1, 0.9, g.Le)
        spec = map_spec(g, stats, ds, priors, simplified=simplified)
        b = rng.uniform(0.2, 1.0, g.Le)
        fd = fd_gradient(lambda v: eval_map(spec, v), b)
        np.testing.assert_allclose(grad_map(spec, b), fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())


class TestMap:
    def test_log_odds(self):
        np.testing.assert_allclose(prior_log_odds([0.5, 0.9, 0.1]), [0.0, -np.log(9), np.log(9)])

    def test_value_is_scaled_likelihood_plus_linear(self):
        rng, g, stats, _, _ = instance(12)
        ds = random_dataset(rng, g.N, T=25)
        priors = rng.uniform(0.1, 0.9, g.Le)
        spec = map_spec(g, stats, ds, priors)
        b = rng.uniform(0.2, 1.0, g.Le)
        expected = 12.5 * eval_f(spec, b) + prior_log_odds(priors) @ b
        assert eval_map(spec, b) == pytest.approx(expected, rel=1e-12)

    def test_hard_priors_clamp_and_zero_gradient(self):
        rng, g, stats, _, bt = instance(13)
        ds = random_dataset(rng, g.N, T=25)
        priors = np.full(g.Le, np.nan)
        on, off = np.flatnonzero(bt)[0], np.flatnonzero(bt == 0)[0]
        priors[on], priors[off] = 1.0, 0.0
        spec = map_spec(g, stats, ds, priors)
        assert spec.kind == MAP_DETAILED
        b = rng.uniform(0.2, 1.0, g.Le)
        grad = grad_map(spec, b)
        assert grad[on] == 0.0 and grad[off] == 0.0
        b2 = b.copy()
        b2[on], b2[off] = 0.123, 0.987
        assert eval_map(spec, b2) == eval_map(spec, b)
        assert spec.free.sum() == g.Le - 2

    def test_infinite_beta_on_free_line_rejected(self):
        _, g, stats, ds, _ = instance(14)
        with pytest.raises(ValueError):
            ObjectiveSpec(MAP_DETAILED, g, stats, ds, beta=np.full(g.Le, np.inf))

    def test_map_accessors_need_map_kind(self):
        _, g, stats, ds, _ = instance(14)
        with pytest.raises(ValueError):
            eval_map(ml_spec(g, stats, ds), np.ones(g.Le))


class TestShape:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_simplified_is_midpoint_convex(self, seed):
        rng, g, stats, _, _ = instance(seed, n_total=6, n_extra=2)
        spec = ml_spec(g, stats, random_dataset(rng, g.N), simplified=True)
        a, c = rng.uniform(0.05, 1.0, (2, g.Le))
        fa, fc, fm = eval_ftilde(spec, a), eval_ftilde(spec, c), eval_ftilde(spec, 0.5 * (a + c))
        assert fm <= 0.5 * (fa + fc) + 1e-9 * max(abs(fm), 1.0)

    def test_detailed_is_not_convex(self):
        # fixed witness: the detailed objective breaks midpoint convexity
        rng, g, stats, ds, _ = instance(1, n_total=5, n_extra=2)
        spec = ml_spec(g, stats, ds)
        gaps = []
        for _ in range(20):
            a, c = rng.uniform(0.05, 1.0, (2, g.Le))
            gaps.append(eval_f(spec, 0.5 * (a + c)) - 0.5 * (eval_f(spec, a) + eval_f(spec, c)))
        assert max(gaps) > 1e-3

    @pytest.mark.parametrize("seed", range(4))
    def test_truth_is_exhaustive_minimizer_with_ensemble_data(self, seed):
        _, g, stats, ds, bt = instance(seed, n_total=6, n_extra=3)
        spec = ml_spec(g, stats, ds)
        L = int(bt.sum())
        best = min(
            (eval_f(spec, np.isin(np.arange(g.Le), idx).astype(float)), idx)
            for idx in itertools.combinations(range(g.Le), L)
        )
        np.testing.assert_array_equal(np.isin(np.arange(g.Le), best[1]), bt.astype(bool))
        assert np.abs(grad_f(spec, bt)).max() < 1e-8

    def test_proportional_model_orders_like_simplified(self):
        rng = np.random.default_rng(21)
        g0 = random_grid(rng, 5, 2)
        alpha = 1.6
        g = GridModel.from_edges(g0.n_total, g0.endpoints, alpha * g0.x, g0.x)
        stats = random_stats(rng, g.N, noise=0.0).with_alpha(alpha)
        spec = ml_spec(g, stats, random_dataset(rng, g.N))
        logdet_sa = np.linalg.slogdet(stats.Sigma_alpha)[1]
        for bits in itertools.product((0.0, 1.0), repeat=g.Le):
            b = np.array(bits)
            f, ft = eval_f(spec, b), eval_ftilde(spec, b)
            if np.isinf(f):
                assert np.isinf(ft)
            else:
                assert f == pytest.approx(ft + logdet_sa, rel=1e-9, abs=1e-9)
