"""Tests for the low-rank plus diagonal precision matrix estimator."""

import numpy as np
import pytest

from lodiag.errors import InvalidInput, NotPositiveDefinite
from lodiag.estimator import (
    FitConfig,
    fit_fixed_rank,
    fit_rank_penalized,
    fit_rank_sweep,
    objective,
    precision_parts_from_covariance,
    rank_penalty,
    select_penalized,
    update_D,
    update_L,
)
from lodiag.linalg import inv_pd, logdet_pd, sample_covariance, symmetrize

TIGHT = FitConfig(bcd_tol=1e-15, bcd_max_iter=20000)


def random_spd(rng, p, extra=4):
    a = rng.standard_normal((p, p + extra))
    return symmetrize(a @ a.T / (p + extra))


def random_psd_low_rank(rng, p, r, scale=0.3):
    a = rng.standard_normal((p, r)) * scale
    return symmetrize(a @ a.T)


class TestObjective:
    def test_identity(self):
        assert objective(np.eye(5), np.eye(5)) == pytest.approx(5.0, abs=1e-12)

    def test_at_inverse(self):
        rng = np.random.default_rng(0)
        s = random_spd(rng, 6)
        assert objective(inv_pd(s), s) == pytest.approx(6.0 + logdet_pd(s), abs=1e-9)

    def test_hand_value(self):
        assert objective(np.diag([2.0, 2.0]), np.eye(2)) == pytest.approx(4.0 - 2.0 * np.log(2.0), abs=1e-12)

    def test_not_pd_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            objective(np.diag([1.0, -1.0]), np.eye(2))


class TestUpdateL:
    def test_identity_collapses_to_zero(self):
        for r in (0, 1, 3):
            np.testing.assert_array_equal(update_L(np.ones(3), np.eye(3), r), np.zeros((3, 3)))

    def test_single_spike(self):
        l = update_L(np.ones(3), np.diag([4.0, 1.0, 1.0]), 1)
        expected = np.zeros((3, 3))
        expected[0, 0] = 0.75  # shrunk top eigenvalue: 1 - 1/4
        np.testing.assert_allclose(l, expected, atol=1e-12)

    def test_matches_frozen_brute_force_oracle(self):
        # Frozen instance: multi-start Nelder-Mead over rank-1 candidates
        # L = v v' gave optimal objective 2.827925008871 for this (S, d).
        s = np.array(
            [
                [0.57480039, -0.37794265, -0.2351435, 0.11284166],
                [-0.37794265, 1.19071923, 0.36028051, 0.12045005],
                [-0.2351435, 0.36028051, 0.68894242, -0.37320594],
                [0.11284166, 0.12045005, -0.37320594, 0.76157733],
            ]
        )
        d = np.array([1.11372082, 1.59727478, 1.87309336, 1.98063757])
        l = update_L(d, s, 1)
        assert objective(np.diag(d) - l, s) == pytest.approx(2.827925008871, abs=1e-4)

    def test_beats_random_candidates(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            p = int(rng.integers(3, 6))
            r = int(rng.integers(1, 3))
            s = random_spd(rng, p)
            d = rng.uniform(0.5, 2.0, p)
            value = objective(np.diag(d) - update_L(d, s, r), s)
            for _ in range(200):
                cand = random_candidate(rng, d, p, r)
                assert objective(np.diag(d) - cand, s) >= value - 1e-9

    def test_rank_never_exceeds_cap(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            p = int(rng.integers(2, 12))
            r = int(rng.integers(0, p + 1))
            l = update_L(rng.uniform(0.2, 3.0, p), random_spd(rng, p), r)
            assert np.sum(np.linalg.eigvalsh(l) > 1e-10) <= r

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = int(rng.integers(2, 12))
            l = update_L(rng.uniform(0.2, 3.0, p), random_spd(rng, p), int(rng.integers(1, p + 1)))
            assert np.linalg.eigvalsh(l).min() >= -1e-10 * max(1.0, np.abs(l).max())

    def test_nonpositive_diagonal_rejected(self):
        with pytest.raises(InvalidInput):
            update_L(np.array([1.0, 0.0]), np.eye(2), 1)

    def test_rank_out_of_range_rejected(self):
        with pytest.raises(InvalidInput):
            update_L(np.ones(2), np.eye(2), 3)


def random_candidate(rng, d, p, r):
    """Random PSD rank-r matrix scaled so diag(d) - candidate stays PD."""
    a = rng.standard_normal((p, r))
    cand = a @ a.T
    root = 1.0 / np.sqrt(d)
    top = np.linalg.eigvalsh(root[:, None] * cand * root[None, :]).max()
    return cand * (rng.uniform(0.0, 0.999) / top)


def diag_program_value(d, l, s):
    return float(d @ np.diag(s) - logdet_pd(np.diag(d) - l))


class TestUpdateD:
    def test_closed_form_when_l_zero(self):
        s = np.diag([2.0, 4.0, 5.0]) + 0.0
        result = update_D(np.zeros((3, 3)), s, np.ones(3))
        assert result.converged
        np.testing.assert_allclose(result.d, [0.5, 0.25, 0.2], atol=1e-7)

    def test_identity(self):
        result = update_D(np.zeros((2, 2)), np.eye(2), np.full(2, 3.0))
        np.testing.assert_allclose(result.d, [1.0, 1.0], atol=1e-7)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(10):
            p = 5
            s = random_spd(rng, p)
            l = random_psd_low_rank(rng, p, 2)
            d = np.linalg.eigvalsh(l).max() + rng.uniform(0.5, 1.5, p)
            analytic = np.diag(s) - np.diag(inv_pd(np.diag(d) - l))
            fd = np.empty(p)
            for j in range(p):
                e = np.zeros(p)
                e[j] = h
                fd[j] = (diag_program_value(d + e, l, s) - diag_program_value(d - e, l, s)) / (2 * h)
            np.testing.assert_allclose(fd, analytic, rtol=1e-5, atol=1e-8)

    def test_stationarity_at_convergence(self):
        rng = np.random.default_rng(5)
        cfg = FitConfig()
        for _ in range(10):
            p = 5
            s = random_spd(rng, p)
            l = random_psd_low_rank(rng, p, 2)
            d0 = np.linalg.eigvalsh(l).max() + rng.uniform(0.5, 1.5, p)
            result = update_D(l, s, d0, cfg)
            assert result.converged
            grad = np.diag(s) - np.diag(inv_pd(np.diag(result.d) - l))
            assert np.abs(grad).max() <= cfg.newton_tol

    def test_never_increases_value(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = 6
            s = random_spd(rng, p)
            l = random_psd_low_rank(rng, p, 2)
            d0 = np.linalg.eigvalsh(l).max() + rng.uniform(0.5, 1.5, p)
            result = update_D(l, s, d0)
            assert diag_program_value(result.d, l, s) <= diag_program_value(d0, l, s) + 1e-12

    def test_infeasible_start_rejected(self):
        l = np.eye(2) * 5.0
        with pytest.raises(InvalidInput):
            update_D(l, np.eye(2), np.ones(2))


class TestFitFixedRank:
    def test_identity_input(self):
        fit = fit_fixed_rank(np.eye(4), 1)
        np.testing.assert_allclose(fit.theta, np.eye(4), atol=1e-8)
        np.testing.assert_array_equal(fit.decomposition.L, np.zeros((4, 4)))
        assert fit.objective == pytest.approx(4.0, abs=1e-10)
        assert fit.decomposition.rank == 0

    def test_rank_zero_closed_form(self):
        rng = np.random.default_rng(7)
        s = random_spd(rng, 5)
        fit = fit_fixed_rank(s, 0)
        np.testing.assert_allclose(fit.decomposition.d, 1.0 / np.diag(s), atol=1e-14)
        assert fit.iterations == 0 and fit.converged

    def test_recovers_compound_symmetric_inverse(self):
        # sigma itself is rank-1 + diagonal, so its inverse lies in the
        # rank-1 search space and the fit must reach it.
        sigma = 0.2 * np.ones((3, 3)) + 0.8 * np.eye(3)
        fit = fit_fixed_rank(sigma, 1, cfg=TIGHT)
        assert np.abs(fit.theta - inv_pd(sigma)).max() <= 1e-6

    def test_conservative_rank_same_objective(self):
        sigma = 0.2 * np.ones((3, 3)) + 0.8 * np.eye(3)
        tight = fit_fixed_rank(sigma, 1, cfg=TIGHT)
        loose = fit_fixed_rank(sigma, 2, cfg=TIGHT)
        assert loose.objective == pytest.approx(tight.objective, abs=1e-8)

    def test_monotone_trace_and_feasible_path(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            p = int(rng.integers(3, 15))
            s = sample_covariance(rng.standard_normal((2 * p, p)))
            fit = fit_fixed_rank(s, int(rng.integers(0, min(5, p) + 1)))
            trace = fit.objective_trace
            assert all(b <= a + 1e-10 for a, b in zip(trace, trace[1:]))
            assert fit.objective == trace[-1]
            assert np.linalg.eigvalsh(fit.theta).min() > 0
            assert np.all(fit.decomposition.d > 0)

    def test_realized_rank_bounded_by_candidate(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            p = int(rng.integers(3, 15))
            r = int(rng.integers(0, p + 1))
            s = sample_covariance(rng.standard_normal((2 * p, p)))
            fit = fit_fixed_rank(s, r)
            assert fit.decomposition.rank <= r

    def test_zero_variance_rejected(self):
        s = np.diag([1.0, 0.0])
        with pytest.raises(InvalidInput):
            fit_fixed_rank(s, 1)

    def test_theta_equals_parts(self):
        rng = np.random.default_rng(10)
        s = random_spd(rng, 6)
        fit = fit_fixed_rank(s, 2)
        np.testing.assert_array_equal(
            fit.theta, np.diag(fit.decomposition.d) - fit.decomposition.L
        )


class TestRankPenalty:
    def test_values(self):
        assert rank_penalty(0, 100, 100, 1.0) == pytest.approx(2.0, abs=1e-12)
        assert rank_penalty(5, 100, 100, 1.0) == pytest.approx(11.8, abs=1e-12)

    def test_strictly_increasing_in_rank(self):
        for p, n, delta in ((100, 100, 1.0), (10, 50, 0.6), (30, 7, 2.5)):
            values = [rank_penalty(r, p, n, delta) for r in range(p + 1)]
            assert all(b > a for a, b in zip(values, values[1:]))

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInput):
            rank_penalty(3, 2, 100, 1.0)
        with pytest.raises(InvalidInput):
            rank_penalty(1, 2, 0, 1.0)
        with pytest.raises(InvalidInput):
            rank_penalty(1, 2, 100, 0.0)


class TestRankPenalizedFit:
    def test_identity_selects_rank_zero(self):
        fit = fit_rank_penalized(np.eye(6), [1, 3, 5], 100, 0.8)
        assert fit.decomposition.rank == 0
        np.testing.assert_allclose(fit.theta, np.eye(6), atol=1e-8)
        assert fit.penalty == pytest.approx(rank_penalty(0, 6, 100, 0.8), abs=1e-12)

    def test_singleton_candidate(self):
        rng = np.random.default_rng(11)
        s = random_spd(rng, 8)
        fit = fit_rank_penalized(s, [3], 40, 1.0)
        assert fit.candidate_rank == 3
        assert fit.penalty == pytest.approx(rank_penalty(fit.decomposition.rank, 8, 40, 1.0))

    def test_warm_start_matches_manual_sweep(self):
        rng = np.random.default_rng(12)
        s = sample_covariance(rng.standard_normal((40, 10)))
        fits = fit_rank_sweep(s, [1, 2, 4], FitConfig())
        d = 1.0 / np.diag(s)
        for r, fit in zip([1, 2, 4], fits):
            manual = fit_fixed_rank(s, r, d, FitConfig())
            d = manual.decomposition.d
            assert manual.objective == pytest.approx(fit.objective, abs=1e-12)

    def test_selection_minimizes_penalized_objective(self):
        rng = np.random.default_rng(13)
        s = sample_covariance(rng.standard_normal((30, 12)))
        fits = fit_rank_sweep(s, [0, 1, 2, 3], FitConfig())
        chosen = select_penalized(fits, 30, 1.0)
        scores = [f.objective + rank_penalty(f.decomposition.rank, 12, 30, 1.0) for f in fits]
        assert chosen.objective + chosen.penalty == pytest.approx(min(scores), abs=1e-12)

    def test_unsorted_candidates_rejected(self):
        with pytest.raises(InvalidInput):
            fit_rank_penalized(np.eye(4), [3, 1], 10, 1.0)


class TestPrecisionParts:
    def test_zero_low_rank(self):
        l0, d0 = precision_parts_from_covariance(np.zeros((3, 3)), np.array([2.0, 4.0, 5.0]))
        np.testing.assert_array_equal(l0, np.zeros((3, 3)))
        np.testing.assert_allclose(d0, [0.5, 0.25, 0.2])

    def test_compound_symmetric_2x2(self):
        l_sigma = 0.2 * np.ones((2, 2))
        l0, d0 = precision_parts_from_covariance(l_sigma, np.array([0.8, 0.8]))
        expected = np.array([[1.0, -0.2], [-0.2, 1.0]]) / 0.96
        assert np.abs((np.diag(d0) - l0) - expected).max() <= 1e-10

    def test_random_rank2_identity(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            l_sigma = random_psd_low_rank(rng, 6, 2, scale=1.0)
            d_sigma = rng.uniform(0.5, 2.0, 6)
            l0, d0 = precision_parts_from_covariance(l_sigma, d_sigma)
            product = (np.diag(d0) - l0) @ (l_sigma + np.diag(d_sigma))
            assert np.abs(product - np.eye(6)).max() <= 1e-8
            assert np.sum(np.linalg.eigvalsh(l0) > 1e-10) <= 2

    def test_rank_preserved_for_fit_recovery(self):
        # a covariance built from a rank-1 + diagonal split has a precision
        # matrix in the rank-1 search space; the fit must absorb it.
        rng = np.random.default_rng(15)
        v = rng.uniform(0.2, 1.0, 4)
        sigma = np.outer(v, v) + np.diag(rng.uniform(0.8, 1.5, 4))
        fit = fit_fixed_rank(sigma, 1, cfg=TIGHT)
        assert np.abs(fit.theta - inv_pd(sigma)).max() <= 1e-6

    def test_non_pd_sum_rejected(self):
        # an indefinite "low-rank part" makes the reassembled covariance
        # indefinite, which the identity cannot invert
        indefinite = np.array([[0.0, 2.0], [2.0, 0.0]])
        with pytest.raises(NotPositiveDefinite):
            precision_parts_from_covariance(indefinite, np.array([0.5, 0.5]))


class TestFitConfig:
    def test_defaults_valid(self):
        cfg = FitConfig()
        assert cfg.bcd_tol == 1e-7 and cfg.bcd_max_iter == 500
        assert cfg.newton_tol == 1e-8 and cfg.newton_max_iter == 100

    def test_bad_values_rejected(self):
        with pytest.raises(InvalidInput):
            FitConfig(bcd_tol=0.0)
        with pytest.raises(InvalidInput):
            FitConfig(bcd_max_iter=0)
