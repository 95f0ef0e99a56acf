"""Tests for the distribution toolbox: Gamma helper, etBFRY, truncated GGP."""

import mpmath
import numpy as np
import pytest
from scipy import integrate

from dynsnetoc.distributions import (
    EtBfryParams,
    GgpParams,
    etbfry_log_density,
    etbfry_sample,
    gamma_sample,
    ggp_tail_intensity,
    ggp_truncated_sample,
)
from dynsnetoc.errors import ParameterError

from oracles import ks_critical, ks_statistic, quadrature_cdf, quadrature_mean


def etbfry_pdf(p):
    return lambda w: np.exp(etbfry_log_density(np.maximum(w, 1e-310), p))


class TestGammaSample:
    def test_exponential_identity(self):
        rng = np.random.default_rng(1)
        draws = gamma_sample(1.0, 1.0, rng, size=100_000)
        assert abs(draws.mean() - 1.0) < 0.02

    def test_moments_shape2_rate4(self):
        rng = np.random.default_rng(2)
        draws = gamma_sample(2.0, 4.0, rng, size=100_000)
        assert abs(draws.mean() - 0.5) < 0.01
        assert abs(draws.var() - 0.125) < 0.01

    def test_ks_against_quadrature_cdf(self):
        # shape < 1 exercises the integrable singularity at zero
        shape, rate = 0.3, 2.0
        rng = np.random.default_rng(3)
        draws = gamma_sample(shape, rate, rng, size=100_000)
        log_norm = shape * np.log(rate) - float(mpmath.log(mpmath.gamma(shape)))

        def pdf(w):
            w = np.asarray(w, dtype=float)
            return np.exp(log_norm + (shape - 1.0) * np.log(w) - rate * w)

        stat = ks_statistic(draws, lambda x: quadrature_cdf(pdf, x))
        assert stat < ks_critical(draws.size, 0.01)

    def test_rejects_bad_parameters(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ParameterError):
            gamma_sample(0.0, 1.0, rng)
        with pytest.raises(ParameterError):
            gamma_sample(1.0, -2.0, rng)
        with pytest.raises(ParameterError):
            gamma_sample(np.nan, 1.0, rng)


class TestEtBfryDensity:
    def test_normalizes_at_reference_parameters(self):
        p = EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=0.2)
        pdf = etbfry_pdf(p)
        total = sum(integrate.quad(pdf, lo, hi, limit=400)[0]
                    for lo, hi in [(0, 1e-3), (1e-3, 1.0), (1.0, np.inf)])
        assert abs(total - 1.0) < 1e-6

    @pytest.mark.parametrize("sigma", [0.1, 0.2, 0.5])
    def test_normalizes_across_sigma_grid(self, sigma):
        p = EtBfryParams(alpha=10, truncation_level=200, tau=1.5, sigma=sigma)
        pdf = etbfry_pdf(p)
        total = sum(integrate.quad(pdf, lo, hi, limit=400)[0]
                    for lo, hi in [(0, 1e-3), (1e-3, 1.0), (1.0, np.inf)])
        assert abs(total - 1.0) < 1e-6

    def test_tail_behaviour(self):
        # far in the tail the log density is -tau*w + (-1-sigma)*log w + const
        p = EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=0.2)
        diff = etbfry_log_density(60.0, p) - etbfry_log_density(50.0, p)
        expected = -p.tau * 10.0 + (-1.0 - p.sigma) * (np.log(60.0) - np.log(50.0))
        assert abs(diff - expected) < 1e-4

    def test_value_against_extended_precision(self):
        p = EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=0.2)
        with mpmath.workdps(60):
            sigma, tau = mpmath.mpf("0.2"), mpmath.mpf("1")
            c = (sigma * 1258 / 60) ** (1 / sigma)
            w = mpmath.mpf("1")
            dens = (sigma * w ** (-1 - sigma) * mpmath.exp(-tau * w)
                    * (1 - mpmath.exp(-c * w)))
            dens /= mpmath.gamma(1 - sigma) * ((tau + c) ** sigma - tau ** sigma)
            expected = float(mpmath.log(dens))
        assert abs(etbfry_log_density(1.0, p) - expected) < 1e-12

    def test_domain_errors(self):
        p = EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=0.2)
        with pytest.raises(ParameterError):
            etbfry_log_density(0.0, p)
        with pytest.raises(ParameterError):
            etbfry_log_density(-1.0, p)
        with pytest.raises(ParameterError):
            EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=1.2)


class TestEtBfrySample:
    p = EtBfryParams(alpha=60, truncation_level=1258, tau=1.0, sigma=0.2)

    def test_mean_matches_quadrature(self):
        rng = np.random.default_rng(7)
        draws = etbfry_sample(self.p, rng, size=100_000)
        mean = quadrature_mean(etbfry_pdf(self.p))
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - mean) < 3 * se

    def test_ks_against_quadrature_cdf(self):
        rng = np.random.default_rng(8)
        draws = etbfry_sample(self.p, rng, size=100_000)
        pdf = etbfry_pdf(self.p)
        stat = ks_statistic(draws, lambda x: quadrature_cdf(pdf, x))
        assert stat < ks_critical(draws.size, 0.01)

    def test_support(self):
        rng = np.random.default_rng(9)
        draws = etbfry_sample(self.p, rng, size=50_000)
        assert np.all(draws > 0)
        assert np.all(np.isfinite(draws))


class TestTailIntensity:
    @pytest.mark.parametrize("sigma", [-0.5, 0.3, 0.7])
    def test_incomplete_gamma_matches_quadrature(self, sigma):
        p = GgpParams(alpha=1.0, sigma=sigma, tau=1.3)
        for eps in (1e-4, 1e-2, 0.5):
            a = ggp_tail_intensity(p, eps, method="incomplete-gamma")
            b = ggp_tail_intensity(p, eps, method="quadrature")
            assert abs(a - b) / b < 1e-8

    def test_near_zero_sigma_uses_quadrature(self):
        p = GgpParams(alpha=1.0, sigma=1e-3, tau=1.0)
        auto = ggp_tail_intensity(p, 1e-3)
        quad = ggp_tail_intensity(p, 1e-3, method="quadrature")
        assert auto == quad

    def test_finite_activity_closed_form(self):
        p = GgpParams(alpha=1.0, sigma=-0.5, tau=1.0)
        assert abs(ggp_tail_intensity(p, 0.0) - 2.0) < 1e-12

    def test_reference_scale_matches_paper_realization(self):
        # ~21 atoms per unit alpha at (sigma=0.2, tau=1, eps=1e-4); the
        # reference synthetic run of this size had 1258 atoms at alpha=60
        p = GgpParams(alpha=60.0, sigma=0.2, tau=1.0)
        rho = ggp_tail_intensity(p, 1e-4)
        assert 19.0 < rho < 24.0
        assert abs(60.0 * rho - 1258) < 3.5 * np.sqrt(60.0 * rho)


class TestGgpTruncatedSample:
    def test_finite_activity_counts_and_jump_law(self):
        p = GgpParams(alpha=10.0, sigma=-0.5, tau=1.0)
        rng = np.random.default_rng(11)
        counts = np.empty(10_000)
        pool = []
        for r in range(counts.size):
            w, theta = ggp_truncated_sample(p, 0.0, rng)
            counts[r] = w.size
            if r < 400:
                pool.append(w)
        assert abs(counts.mean() - 20.0) < 0.5
        dispersion = counts.var() / counts.mean()
        assert 0.95 < dispersion < 1.05
        jumps = np.concatenate(pool)
        from scipy.stats import gamma as gamma_dist
        stat = ks_statistic(jumps, lambda x: gamma_dist.cdf(x, 0.5, scale=1.0))
        assert stat < ks_critical(jumps.size, 0.01)

    def test_infinite_activity_count_band(self):
        p = GgpParams(alpha=60.0, sigma=0.2, tau=1.0)
        mean = 60.0 * ggp_tail_intensity(p, 1e-4)
        rng = np.random.default_rng(12)
        w, theta = ggp_truncated_sample(p, 1e-4, rng)
        assert abs(w.size - mean) < 3.0 * np.sqrt(mean)

    def test_support_restrictions(self):
        p = GgpParams(alpha=25.0, sigma=0.3, tau=1.0)
        rng = np.random.default_rng(13)
        w, theta = ggp_truncated_sample(p, 1e-3, rng)
        assert np.all(w > 1e-3)
        assert np.all((theta >= 0) & (theta <= 25.0))

    def test_epsilon_zero_infinite_activity_rejected(self):
        p = GgpParams(alpha=10.0, sigma=0.2, tau=1.0)
        with pytest.raises(ParameterError):
            ggp_truncated_sample(p, 0.0, np.random.default_rng(0))


class TestEtBfryGgpConvergence:
    def test_laplace_transform_single_level(self):
        # quick sanity version of the full convergence suite in the
        # acceptance tests: closed form verified by quadrature, then one
        # moderate truncation level within 2%
        alpha, tau, sigma, s = 2.0, 1.0, 0.2, 1.0
        exact = np.exp(-(alpha / sigma) * ((tau + s) ** sigma - tau ** sigma))
        check, _ = integrate.quad(
            lambda w: (1 - np.exp(-s * w)) * w ** (-1 - sigma)
            * np.exp(-tau * w) / np.exp(float(mpmath.log(mpmath.gamma(1 - sigma)))),
            0, np.inf, limit=400)
        assert abs(np.exp(-alpha * check) - exact) < 1e-10
        level = 500
        p = EtBfryParams(alpha=alpha, truncation_level=level, tau=tau, sigma=sigma)
        rng = np.random.default_rng(21)
        draws = etbfry_sample(p, rng, size=(20_000, level)).sum(axis=1)
        emp = np.exp(-s * draws).mean()
        assert abs(emp - exact) < 0.02
