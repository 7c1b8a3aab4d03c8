import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rejaug.core import (AugmentedDataset, ErgodicityInputs, FiniteRejectionModel,
                         IndexedFiniteModel, exact_da_kernel, exact_posterior_finite,
                         finite_theta_update, gibbs_iteration, log1mexp, log_joint_augmented,
                         resample_rejected, run_gibbs, sample_many, sample_with_rejections,
                         swapped_two_atom_model, theorem1_bound, tilted_bernoulli_model,
                         tilted_bernoulli_update, two_atom_model)
from rejaug.errors import DomainError, MaxAttemptsError


def exact_model():
    """f = M q: every proposal is accepted."""
    return FiniteRejectionModel(weights=lambda th: np.array([0.5, 0.5]),
                                proposal=np.array([0.5, 0.5]), M=1.0)


def test_log1mexp_matches_naive_where_safe():
    a = -np.logspace(-8, 2, 50)
    assert np.allclose(log1mexp(a), np.log(1 - np.exp(a)), rtol=1e-6)
    assert log1mexp(np.array([0.0]))[0] == -np.inf


class TestSampling:
    def test_two_atom_marginal(self):
        model = two_atom_model()
        x, _ = sample_many(model, None, 30000, np.random.default_rng(0))
        assert np.mean(x == 0) == pytest.approx(2 / 3, abs=3 * math.sqrt(2 / 9 / 30000))

    def test_single_draw_shapes(self):
        x, Y = sample_with_rejections(two_atom_model(), None, np.random.default_rng(1))
        assert np.ndim(x) == 0
        assert np.asarray(Y).ndim == 1
        assert np.all(np.asarray(Y) >= 0)

    def test_exact_envelope_never_rejects(self):
        rej = resample_rejected(exact_model(), None, 500, np.random.default_rng(2))
        assert len(rej) == 500
        assert all(len(r) == 0 for r in rej)

    def test_rejection_count_geometric(self):
        # P(|Y| = r) = (3/4)(1/4)^r for Z/M = 3/4
        rej = resample_rejected(two_atom_model(), None, 40000, np.random.default_rng(3))
        sizes = np.array([len(r) for r in rej])
        for r in range(4):
            p = 0.75 * 0.25 ** r
            assert np.mean(sizes == r) == pytest.approx(p, abs=3 * math.sqrt(p * (1 - p) / 40000))

    def test_rejected_points_follow_residual(self):
        # rejected atoms have law proportional to q - f/M = (0, 1/4): only atom 1 is ever rejected
        rej = resample_rejected(two_atom_model(), None, 2000, np.random.default_rng(4))
        ys = np.concatenate(rej)
        assert ys.size > 0 and np.all(ys == 1)

    def test_max_attempts_guard(self):
        model = FiniteRejectionModel(weights=lambda th: np.array([1e-9, 0.0]),
                                     proposal=np.array([0.5, 0.5]), M=1.0)
        with pytest.raises(MaxAttemptsError):
            sample_many(model, None, 5, np.random.default_rng(5), max_attempts=1000)

    def test_resample_needs_observations(self):
        with pytest.raises(ValueError):
            resample_rejected(two_atom_model(), None, 0, np.random.default_rng(0))


class TestJoint:
    def test_single_pair_value(self):
        data = AugmentedDataset(np.array([0]), [np.array([1])])
        assert log_joint_augmented(two_atom_model(), None, data) == pytest.approx(math.log(0.125))

    def test_empty_rejections(self):
        data = AugmentedDataset(np.array([1]), [np.array([], dtype=int)])
        assert log_joint_augmented(two_atom_model(), None, data) == pytest.approx(math.log(1 / 4))

    def test_impossible_rejection_is_minus_inf(self):
        model = FiniteRejectionModel(weights=lambda th: np.array([2.0, 2.0]),
                                     proposal=np.array([0.5, 0.5]), M=4.0)
        data = AugmentedDataset(np.array([0]), [np.array([1])])
        assert log_joint_augmented(model, None, data) == -np.inf

    def test_truncated_enumeration_sums_to_one(self):
        # all (Y, x) with |Y| <= 30 on two atoms; missing mass is (1 - Z/M)^31
        model = two_atom_model()
        total = 0.0
        for r in range(31):
            # only atom 1 can be rejected, so Y is (1,)*r
            for x in (0, 1):
                data = AugmentedDataset(np.array([x]), [np.ones(r, dtype=int)])
                total += math.exp(log_joint_augmented(model, None, data))
        assert total == pytest.approx(1 - 0.25 ** 31, abs=1e-12)

    def test_misaligned_dataset(self):
        with pytest.raises(ValueError):
            AugmentedDataset(np.array([0, 1]), [np.array([1])])

    def test_total_count(self):
        data = AugmentedDataset(np.array([0, 1]), [np.array([1, 1]), np.array([], dtype=int)])
        assert data.total == 4
        assert list(data.sizes) == [2, 0]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5), st.integers(0, 2**32 - 1))
    def test_envelope_and_marginal_small_models(self, w, seed):
        w = np.array(w)
        q = np.full(w.size, 1 / w.size)
        M = float(np.max(w / q))
        model = FiniteRejectionModel(weights=lambda th: w, proposal=q, M=M)
        assert model.check_envelope(None)
        x, _ = sample_many(model, None, 4000, np.random.default_rng(seed))
        counts = np.bincount(x, minlength=w.size)
        p = stats.chisquare(counts, 4000 * w / w.sum()).pvalue
        assert p > 1e-4


class TestGibbs:
    def test_identity_kernel_reduces_to_conditional(self):
        calls = []

        def th2(theta, aug, rng):
            return theta

        def th1(theta, X, rng):
            calls.append(len(X))
            return theta + 1

        meta = {}
        out = gibbs_iteration(two_atom_model(), np.array([0, 1, 0]), 0, th2, th1,
                              np.random.default_rng(0), meta)
        assert out == 1 and calls == [3] and meta["n_rejected"] >= 0

    def test_trace_length(self):
        tr = run_gibbs(two_atom_model(), np.array([0, 1]), 0.0, lambda t, a, r: t, None, 25,
                       np.random.default_rng(0))
        assert len(tr) == 25

    def test_finite_grid_posterior(self):
        # tilted Bernoulli f = (theta, 1) on a 5-point theta grid with a flat prior
        thetas = [0.1, 0.3, 0.5, 0.7, 0.9]
        model = tilted_bernoulli_model()
        X = np.array([0] * 4 + [1] * 8)
        lp = np.zeros(len(thetas))
        exact = exact_posterior_finite(model, thetas, lp, X)
        idx_model = IndexedFiniteModel(model, thetas)
        update = finite_theta_update(model, thetas, lp)
        tr = run_gibbs(idx_model, X, 2, update, None, 20000, np.random.default_rng(1))
        freq = np.bincount(tr.draws[:, 0].astype(int), minlength=5) / len(tr)
        assert 0.5 * np.abs(freq - exact).sum() < 0.02

    def test_continuous_conjugate_posterior(self):
        # Beta(2, 2) prior, posterior density theta^{a-1+n0} (1-theta)^{b-1} / (1+theta)^n
        a, b = 2.0, 2.0
        X = np.array([0] * 5 + [1] * 7)
        n0, n = 5, 12

        def dens(t):
            return t ** (a - 1 + n0) * (1 - t) ** (b - 1) / (1 + t) ** n

        z = integrate.quad(dens, 0, 1)[0]
        mean = integrate.quad(lambda t: t * dens(t), 0, 1)[0] / z
        tr = run_gibbs(tilted_bernoulli_model(), X, 0.5, tilted_bernoulli_update(a, b), None,
                       20000, np.random.default_rng(2))
        draws = tr.draws[500:, 0]
        ks = stats.kstest(draws[::10], lambda s: np.array(
            [integrate.quad(dens, 0, v)[0] / z for v in np.atleast_1d(s)]))
        assert ks.pvalue > 0.01
        assert draws.mean() == pytest.approx(mean, abs=0.01)

    def test_kernel_preserves_exact_posterior(self):
        model = swapped_two_atom_model()
        thetas = [0, 1]
        X = np.array([0, 0, 1])
        lp = np.log([0.5, 0.5])
        post = exact_posterior_finite(model, thetas, lp, X)
        k = exact_da_kernel(model, thetas, lp, X)
        assert np.allclose(k.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(post @ k, post, atol=1e-12)


class TestTheorem1:
    def test_equal_bounds_single_observation(self):
        d, rho = theorem1_bound(ErgodicityInputs(1, 1, 1, 1, 1, 1, 1))
        assert d == pytest.approx(0.5) and rho == pytest.approx(0.5)

    def test_power_law(self):
        d, rho = theorem1_bound(ErgodicityInputs(2, 2, 3, 3, 1, 1, 10))
        assert d == pytest.approx(2.0 ** -10) and rho == pytest.approx(1 - 2.0 ** -10)

    def test_two_atom_constants(self):
        # b_f=1, B_f=2, b_q=B_q=1/2, r=5/6, R=3/4 -> delta = {1/(2 (5/6 + 4/3))}^n = (3/13)^n
        for n in (1, 2, 5):
            d, _ = theorem1_bound(ErgodicityInputs(1, 2, 0.5, 0.5, 5 / 6, 0.75, n))
            assert d == pytest.approx((3 / 13) ** n, rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.1, 1), st.floats(1, 3), st.floats(0.1, 1), st.floats(1, 3),
           st.floats(0.05, 1), st.floats(0.05, 1), st.integers(1, 20))
    def test_monotone(self, bf, Bf, bq, Bq, r, R, n):
        base, _ = theorem1_bound(ErgodicityInputs(bf, Bf, bq, Bq, r, R, n))
        more_n, _ = theorem1_bound(ErgodicityInputs(bf, Bf, bq, Bq, r, R, n + 1))
        bigger_B, _ = theorem1_bound(ErgodicityInputs(bf, Bf * 1.1, bq, Bq, r, R, n))
        smaller_b, _ = theorem1_bound(ErgodicityInputs(bf * 0.9, Bf, bq, Bq, r, R, n))
        assert 0 < base <= 1
        assert more_n <= base and bigger_B <= base and smaller_b <= base

    @pytest.mark.parametrize("args", [(0, 1, 1, 1, 1, 1, 1), (2, 1, 1, 1, 1, 1, 1),
                                      (1, 1, 1, 1, 0, 1, 1), (1, 1, 1, 1, 1, 1.5, 1),
                                      (1, 1, 1, 1, 1, 1, 0)])
    def test_invalid_inputs(self, args):
        with pytest.raises(DomainError):
            ErgodicityInputs(*args)
