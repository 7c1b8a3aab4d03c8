import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from rejaug.errors import DomainError
from rejaug.specfun import (bessel_ratio, log_bessel_i, log_bessel_norm,
                            log_bessel_norm_and_ratio, log_z_asymptotic)

# log I_nu(x) from mpmath at 40 digits
LOG_I_ORACLE = [
    (0.0, 1e-3, 2.499999843750017465192e-7),
    (3.5, 0.2, -10.51056262282863753408),
    (10.0, 5.0, -5.386046582393018846271),
    (50.0, 100.0, 84.46624343517878252357),
    (0.0, 700.0, 695.8056999984434490768),
    (200.0, 700.0, 667.4043946565144823481),
    (200.0, 1.0, -1001.860179527129163396),
    (-0.5, 3.0, 1.534231007599002862053),
    (1.0, 30.0, 27.36774808928240751448),
    (25.0, 60.0, 51.85869226827386579946),
]


def series_log_i(nu, x, terms=50):
    """Power series sum_k (x/2)^{2k+nu} / (k! Gamma(k+nu+1)) in log space."""
    k = np.arange(terms)
    logs = (2 * k + nu) * math.log(x / 2) - special.gammaln(k + 1) - special.gammaln(k + nu + 1)
    return float(special.logsumexp(logs))


class TestLogBesselI:
    def test_zero_order_at_zero(self):
        assert log_bessel_i(0, 0) == 0.0

    def test_positive_order_at_zero(self):
        assert log_bessel_i(1, 0) == -np.inf

    def test_half_order_closed_form(self):
        assert log_bessel_i(0.5, 2.0) == pytest.approx(0.71600242968946804298, rel=1e-13)

    @pytest.mark.parametrize("nu,x,expected", LOG_I_ORACLE)
    def test_matches_high_precision(self, nu, x, expected):
        assert log_bessel_i(nu, x) == pytest.approx(expected, rel=1e-10, abs=1e-300)

    def test_matches_power_series_on_small_range(self):
        rng = np.random.default_rng(0)
        for nu, x in zip(rng.uniform(0, 10, 200), rng.uniform(0.01, 10, 200)):
            assert log_bessel_i(nu, x) == pytest.approx(series_log_i(nu, x), rel=1e-10)

    def test_finite_over_full_range(self):
        nu = np.linspace(-0.5, 200, 81)[:, None]
        x = np.linspace(1e-6, 700, 97)[None, :]
        assert np.all(np.isfinite(log_bessel_i(nu, x)))

    def test_vectorized_shape(self):
        out = log_bessel_i(np.array([0.0, 1.0, 2.5]), np.array([[1.0], [2.0]]))
        assert out.shape == (2, 3)

    @pytest.mark.parametrize("nu,x", [(-0.6, 1.0), (1.0, -1.0), (np.nan, 1.0), (1.0, np.inf)])
    def test_domain_errors(self, nu, x):
        with pytest.raises(DomainError):
            log_bessel_i(nu, x)


class TestBesselRatio:
    def test_half_order_closed_form(self):
        assert bessel_ratio(0.5, 3.0) == pytest.approx(0.67163648998035583776, rel=1e-12)

    def test_zero_at_origin(self):
        assert bessel_ratio(0.0, 0.0) == 0.0
        assert bessel_ratio(3.0, 0.0) == 0.0

    def test_large_argument(self):
        r = bessel_ratio(0, 1000)
        assert 0.999 < r < 1.0
        assert r == pytest.approx(0.9994998748748042802, rel=1e-12)

    def test_increasing_in_x(self):
        x = np.linspace(0.01, 100, 500)
        for nu in (-0.5, 0.0, 0.5, 3.0, 20.0):
            r = bessel_ratio(nu, x)
            assert np.all(np.diff(r) >= 0)
            # strict wherever the ratio is still resolvable from 1 in double precision
            live = r < 1 - 1e-13
            assert np.all(np.diff(r[live]) > 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-0.5, 200), st.floats(1e-8, 700))
    def test_strictly_inside_unit_interval(self, nu, x):
        r = bessel_ratio(nu, x)
        assert 0 < r < 1

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-0.5, 50), st.floats(0.05, 100))
    def test_agrees_with_log_difference(self, nu, x):
        direct = math.exp(log_bessel_i(nu + 1, x) - log_bessel_i(nu, x))
        assert bessel_ratio(nu, x) == pytest.approx(direct, rel=1e-9)


class TestBesselNorm:
    def test_limit_at_zero(self):
        # Gamma(nu+1) I_nu(x) / (x/2)^nu -> 1 as x -> 0
        assert log_bessel_norm(2.5, 0.0) == pytest.approx(0.0, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 60), st.floats(1e-6, 300))
    def test_fused_matches_separate(self, nu, x):
        lbn, ratio = log_bessel_norm_and_ratio(np.array([nu]), np.array([x]))
        assert lbn[0] == pytest.approx(float(log_bessel_norm(nu, x)), rel=1e-12, abs=1e-12)
        assert ratio[0] == pytest.approx(float(bessel_ratio(nu, x)), rel=1e-12)


class TestLogZAsymptotic:
    def test_sphere_case_is_nearly_exact(self):
        # p=1, d=3: Z(kappa) = sinh(kappa)/kappa, log Z(10) from mpmath
        assert log_z_asymptotic([10.0], 3) == pytest.approx(7.004267724384855382, rel=0.02)

    def test_matches_haar_monte_carlo(self):
        from rejaug.stiefel import mc_log_z
        est, se = mc_log_z([10.0], 3, n_samples=200000, rng=np.random.default_rng(1))
        assert log_z_asymptotic([10.0], 3) == pytest.approx(est, rel=0.02)

    def test_finite_for_three_columns(self):
        assert np.isfinite(log_z_asymptotic([1.0, 5.0, 10.0], 5))

    def test_increasing_for_large_kappa(self):
        k = np.array([1.0, 5.0, 10.0])
        base = log_z_asymptotic(k, 5)
        for i in range(3):
            bumped = k.copy()
            bumped[i] += 1e-3
            if k[i] >= 2.0:
                assert log_z_asymptotic(bumped, 5) > base

    def test_pairwise_term_count(self):
        # the pairwise factor contributes -1/2 log(k_i + k_j) for each of the 3 pairs
        k = np.array([1.0, 2.0, 4.0])
        shift = log_z_asymptotic(k * math.e, 3) - log_z_asymptotic(k, 3)
        # with d = p only the exponential and pairwise terms depend on scale
        expected = (math.e - 1) * k.sum() - 0.5 * 3
        assert shift == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.1, 50), min_size=3, max_size=3), st.integers(3, 10))
    def test_permutation_symmetric(self, k, d):
        k = np.array(k)
        assert log_z_asymptotic(k[::-1], d) == pytest.approx(log_z_asymptotic(k, d), rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            log_z_asymptotic([0.0, 1.0], 3)
