import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import log_ndtr

from rejaug.diagnostics import mcse
from rejaug.errors import DomainError
from rejaug.mixture import (DpmmConfig, NIWPrior, StickBreakingState, TruncatedMixtureModel,
                            TruncationRegion, blocked_gibbs_sweep, fit_truncated_dpmm,
                            grid_modes, grid_to_csv, niw_posterior_draw, normalize_to_unit_box,
                            stick_weights)


def one_gaussian(mu, var):
    return StickBreakingState(np.array([1.0]), np.array([[mu]]), np.array([[[var]]]))


class TestRegion:
    def test_unit_and_whole(self):
        assert TruncationRegion.unit(2).bounded
        assert TruncationRegion.whole_space(2).is_whole_space
        assert not TruncationRegion.unit(2).is_whole_space

    def test_contains(self):
        r = TruncationRegion.unit(2)
        assert list(r.contains([[0.5, 0.5], [1.2, 0.5], [0.0, 1.0]])) == [True, False, True]

    def test_invalid(self):
        with pytest.raises(ValueError):
            TruncationRegion([1.0], [0.0])

    def test_normalize_round_trip(self):
        raw = np.array([[10.0, -1.0], [20.0, 1.0], [15.0, 0.0]])
        scaled, rec = normalize_to_unit_box(raw, [10.0, -1.0], [20.0, 1.0])
        assert np.allclose(scaled, [[0, 0], [1, 1], [0.5, 0.5]])
        assert rec == {"lower": [10.0, -1.0], "upper": [20.0, 1.0]}

    def test_normalize_rejects_outside(self):
        with pytest.raises(ValueError, match="rows \\[1\\]"):
            normalize_to_unit_box(np.array([[0.5], [2.0]]), [0.0], [1.0])


class TestConjugateParts:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=1, max_size=8), st.floats(0.1, 5),
           st.integers(0, 2**32 - 1))
    def test_stick_weights_on_simplex(self, counts, alpha, seed):
        w = stick_weights(counts, alpha, np.random.default_rng(seed))
        assert w.shape == (len(counts),)
        assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)

    def test_first_stick_mean(self):
        # with no data V_1 ~ Beta(1, alpha), E V_1 = 1/(1 + alpha)
        rng = np.random.default_rng(0)
        w1 = np.array([stick_weights(np.zeros(5), 2.0, rng)[0] for _ in range(20000)])
        assert w1.mean() == pytest.approx(1 / 3, abs=0.01)

    def test_niw_prior_covariance_mean(self):
        # E Sigma = Psi / (nu - d - 1) under the prior
        base = NIWPrior(np.zeros(2), 0.5, np.array([[1.0, 0.3], [0.3, 2.0]]), 8.0)
        rng = np.random.default_rng(1)
        S = np.array([niw_posterior_draw(base, np.zeros((0, 2)), rng)[1] for _ in range(20000)])
        assert np.allclose(S.mean(axis=0), base.Psi / 5.0, atol=0.02)

    def test_niw_posterior_concentrates(self):
        base = NIWPrior(np.zeros(2), 0.01, 0.1 * np.eye(2), 4.0)
        rng = np.random.default_rng(2)
        data = rng.multivariate_normal([1.0, -1.0], [[0.5, 0.1], [0.1, 0.2]], 5000)
        mu, Sigma = niw_posterior_draw(base, data, rng)
        assert np.allclose(mu, [1.0, -1.0], atol=0.05)
        assert np.allclose(Sigma, [[0.5, 0.1], [0.1, 0.2]], atol=0.05)

    def test_invalid_niw(self):
        with pytest.raises(ValueError):
            NIWPrior(np.zeros(2), 1.0, np.eye(2), 0.5)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            StickBreakingState(np.array([0.6, 0.6]), np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_log_density_matches_scipy(self):
        state = StickBreakingState(np.array([0.3, 0.7]), np.array([[0.0, 0.0], [1.0, 2.0]]),
                                   np.array([np.eye(2), [[2.0, 0.5], [0.5, 1.0]]]))
        x = np.array([[0.2, -0.1], [1.5, 2.5]])
        ref = np.log(0.3 * stats.multivariate_normal([0, 0], np.eye(2)).pdf(x)
                     + 0.7 * stats.multivariate_normal([1, 2], [[2, .5], [.5, 1]]).pdf(x))
        assert np.allclose(state.log_density(x), ref, rtol=1e-12)


class TestRejectionModel:
    def test_reject_density_support(self):
        model = TruncatedMixtureModel(TruncationRegion.unit(1))
        theta = one_gaussian(0.2, 0.1)
        lr = model.log_reject_density(np.array([[0.5], [1.5], [-0.1]]), theta)
        assert lr[0] == -np.inf and np.all(np.isfinite(lr[1:]))
        assert model.log_M(theta) == 0.0

    def test_empty_sweep_is_prior(self):
        base = NIWPrior(np.zeros(1), 1.0, np.eye(1), 3.0)
        state = StickBreakingState(np.array([0.5, 0.5]), np.zeros((2, 1)), np.ones((2, 1, 1)),
                                   base=base)
        out = blocked_gibbs_sweep(state, np.zeros((0, 1)), np.random.default_rng(0))
        assert out.counts.sum() == 0


@pytest.fixture(scope="module")
def truncated_normal_problem():
    rng = np.random.default_rng(21)
    a, b = (0 - 0.2) / 0.3, (1 - 0.2) / 0.3
    X = stats.truncnorm.rvs(a, b, loc=0.2, scale=0.3, size=40, random_state=rng)[:, None]
    base = NIWPrior(np.array([0.5]), 0.01, np.array([[0.1]]), 3.0)
    # posterior of (mu, s) for one truncated Gaussian by grid quadrature
    mu = np.linspace(-3, 3, 1201)[:, None]
    s = np.linspace(0.02, 3, 1200)[None, :]
    var = s * s
    x = X[:, 0]
    # log{Phi(b) - Phi(a)} without cancellation: use upper tails when a > 0
    a, b = -mu / s, (1 - mu) / s
    flip = a > 0
    hi = np.where(flip, log_ndtr(-a), log_ndtr(b))
    lo = np.where(flip, log_ndtr(-b), log_ndtr(a))
    log_mass = hi + np.log(-np.expm1(lo - hi))
    loglik = (-0.5 * ((x[:, None, None] - mu) ** 2).sum(0) / var - len(x) * np.log(s)
              - len(x) * log_mass)
    # IW(Psi, nu) on var in 1-D is inverse gamma(nu/2, Psi/2); mu | var ~ N(mu0, var/lam0)
    logprior = (stats.invgamma.logpdf(var, base.nu / 2, scale=base.Psi[0, 0] / 2)
                + stats.norm.logpdf(mu, base.mu0[0], np.sqrt(var / base.lam0)))
    lp = loglik + logprior + np.log(2 * s)          # Jacobian var -> s
    w = np.exp(lp - lp.max())
    w /= w.sum()
    return X, base, float((w * mu).sum()), float((w * s).sum())


class TestTruncatedSampler:
    def test_single_component_posterior(self, truncated_normal_problem):
        X, base, mu_mean, s_mean = truncated_normal_problem
        cfg = DpmmConfig(K=1, n_iter=6000, burn_in=500, base=base, grid_size=50)
        tr = fit_truncated_dpmm(X, TruncationRegion.unit(1), cfg, np.random.default_rng(22))
        mu = tr.column("mu[1,1]")
        s = np.sqrt(tr.column("Sigma[1,1,1]"))
        assert mu.mean() == pytest.approx(mu_mean, abs=4 * mcse(mu) + 0.005)
        assert s.mean() == pytest.approx(s_mean, abs=4 * mcse(s) + 0.005)
        assert tr.n_rejected.mean() > 0

    def test_ignoring_truncation_is_biased(self, truncated_normal_problem):
        X, base, mu_mean, _ = truncated_normal_problem
        cfg = DpmmConfig(K=1, n_iter=2000, burn_in=200, base=base, grid_size=50, augment=False)
        tr = fit_truncated_dpmm(X, TruncationRegion.unit(1), cfg, np.random.default_rng(23))
        assert np.all(tr.n_rejected == 0)
        # the naive fit sits at the sample mean, above the untruncated location
        assert tr.column("mu[1,1]").mean() > mu_mean + 0.05

    def test_whole_space_never_augments(self):
        rng = np.random.default_rng(24)
        X = rng.standard_normal((50, 2))
        cfg = DpmmConfig(K=5, n_iter=30, burn_in=5, grid_size=20)
        tr = fit_truncated_dpmm(X, TruncationRegion.whole_space(2), cfg, rng)
        assert np.all(tr.n_rejected == 0)

    def test_grid_density_integrates_to_one(self):
        rng = np.random.default_rng(25)
        X = rng.uniform(0.2, 0.8, (60, 2))
        cfg = DpmmConfig(K=5, n_iter=20, burn_in=5, grid_size=40)
        tr = fit_truncated_dpmm(X, TruncationRegion.unit(2), cfg, rng)
        mass = tr.info["mean_density"].sum() * tr.info["cell_volume"]
        assert mass == pytest.approx(1.0, rel=1e-10)
        text = grid_to_csv(tr)
        assert text.splitlines()[0] == "x,y,mean_density,mean_log_density"
        assert len(text.splitlines()) == 40 * 40 + 1

    def test_outside_data_rejected(self):
        with pytest.raises(DomainError):
            fit_truncated_dpmm(np.array([[0.5, 1.5]]), TruncationRegion.unit(2), DpmmConfig(),
                               np.random.default_rng(0))

    def test_deterministic(self):
        X = np.random.default_rng(26).uniform(0, 1, (30, 2))
        cfg = DpmmConfig(K=4, n_iter=10, burn_in=2, grid_size=10)
        a = fit_truncated_dpmm(X, TruncationRegion.unit(2), cfg, np.random.default_rng(5))
        b = fit_truncated_dpmm(X, TruncationRegion.unit(2), cfg, np.random.default_rng(5))
        assert np.array_equal(a.draws, b.draws)


class TestGridModes:
    def test_two_bumps(self):
        ax = np.linspace(0, 1, 101)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        dens = (np.exp(-((xx - 0.2) ** 2 + (yy - 0.3) ** 2) / 0.01)
                + 0.5 * np.exp(-((xx - 0.7) ** 2 + (yy - 0.8) ** 2) / 0.01))
        modes, heights = grid_modes(dens, [ax, ax], 2)
        assert np.allclose(modes, [[0.2, 0.3], [0.7, 0.8]], atol=1e-9)
        assert heights[0] > heights[1]

    def test_plateau_counts_once(self):
        ax = np.arange(5.0)
        dens = np.zeros((5, 5))
        dens[2, 2] = dens[2, 3] = 1.0
        modes, _ = grid_modes(dens, [ax, ax])
        assert len(modes) == 1

    def test_needs_2d(self):
        with pytest.raises(ValueError):
            grid_modes(np.zeros(5), [np.arange(5)])


def test_truncated_normal_acceptance_rate():
    # P(accept) for one Gaussian is its mass in the box
    model = TruncatedMixtureModel(TruncationRegion.unit(1))
    theta = one_gaussian(0.2, 0.09)
    x = theta.sample(np.random.default_rng(0), 100000)
    acc = np.exp(model.log_accept(x, theta)).mean()
    ref = stats.norm.cdf(1, 0.2, 0.3) - stats.norm.cdf(0, 0.2, 0.3)
    assert acc == pytest.approx(ref, abs=4 * math.sqrt(ref * (1 - ref) / 1e5))
