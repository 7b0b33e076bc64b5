"""
Tests for the hypergeometric inverse gamma prior on Hamming scales
"""

import itertools
import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from hig import (epsilon_cdf, gini_prior_montecarlo, log_density_omega, log_density_sigma,
                 marginal_loglik_column, marginal_loglik_dataset, norm_const_log,
                 omega_cdf, omega_mean_and_mode, posterior_omega_mode, posterior_params,
                 sample_sigma, sample_sigma_batch)
from models import DomainError, HIGParams

PRIORS = [HIGParams(v=6.0, w=0.25, m=2), HIGParams(v=3.0, w=0.5, m=6), HIGParams(v=4.5, w=0.25, m=4),
          HIGParams(v=5.0, w=0.25, m=3)]


def _quad(f, lo, hi):
    value, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=200)
    return value


@pytest.mark.parametrize("params", PRIORS)
def test_omega_density_normalizes(params):
    total = _quad(lambda x: math.exp(log_density_omega(x, params)), 0.0, 1.0)
    assert total == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("params", PRIORS)
def test_sigma_density_normalizes(params):
    # sigma = -1/ln(omega) maps (0, 1) onto (0, inf)
    total = _quad(lambda s: math.exp(log_density_sigma(s, params)), 1e-3, 50.0)
    tail = _quad(lambda s: math.exp(log_density_sigma(s, params)), 50.0, np.inf)
    assert total + tail == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("params", PRIORS)
@pytest.mark.parametrize("x", [0.01, 0.2, 0.5, 0.9])
def test_cdf_methods_agree(params, x):
    reference = omega_cdf(x, params, "quadrature")
    assert omega_cdf(x, params, "beta") == pytest.approx(reference, abs=1e-9)
    assert omega_cdf(x, params, "hypergeometric") == pytest.approx(reference, abs=1e-9)


def test_cdf_endpoints_and_domain():
    params = PRIORS[0]
    assert omega_cdf(0.0, params) == 0.0
    assert omega_cdf(1.0, params) == 1.0
    with pytest.raises(DomainError):
        omega_cdf(1.5, params)


def test_cdf_is_increasing():
    params = PRIORS[1]
    values = [omega_cdf(x, params) for x in np.linspace(0.05, 0.95, 10)]
    assert all(b > a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("params", PRIORS)
def test_epsilon_cdf_is_truncated_beta(params):
    v, w, m = params.key
    upper = (m - 1) / m
    for eps in (0.05, 0.2, 0.45):
        expected = special.betainc(w + 1.0, v - 1.0, eps) / special.betainc(w + 1.0, v - 1.0, upper)
        assert epsilon_cdf(eps, params) == pytest.approx(expected, abs=1e-9)
    assert epsilon_cdf(upper, params) == 1.0
    with pytest.raises(DomainError):
        epsilon_cdf(0.9, params)


def test_single_modality_prior():
    params = HIGParams(v=3.0, w=0.5, m=1)
    assert norm_const_log(params) == pytest.approx(-math.log(1.5))
    assert omega_cdf(0.3, params) == pytest.approx(0.3 ** 1.5)
    draws = sample_sigma_batch(np.full(500, 3.0), np.full(500, 0.5), np.full(500, 1), np.random.default_rng(1))
    assert np.all(draws > 0)


@pytest.mark.parametrize("params", PRIORS)
def test_batch_sampler_matches_cdf(params, rng):
    size = 3000
    sigma = sample_sigma_batch(np.full(size, params.v), np.full(size, params.w), np.full(size, params.m), rng)
    omega = np.exp(-1.0 / sigma)
    cdf = np.vectorize(lambda x: omega_cdf(float(x), params, "beta"))
    _, p_value = stats.kstest(omega, cdf)
    assert p_value > 1e-3


@pytest.mark.slow
def test_root_sampler_matches_cdf(rng):
    params = PRIORS[2]
    omega = np.exp(-1.0 / np.array([sample_sigma(params, rng) for _ in range(400)]))
    cdf = np.vectorize(lambda x: omega_cdf(float(x), params, "beta"))
    _, p_value = stats.kstest(omega, cdf)
    assert p_value > 1e-3


def test_batch_sampler_small_v_falls_back(rng):
    params = HIGParams(v=0.8, w=0.5, m=3)
    sigma = sample_sigma_batch(np.full(40, params.v), np.full(40, params.w), np.full(40, params.m), rng)
    assert sigma.shape == (40,)
    assert np.all(np.isfinite(sigma)) and np.all(sigma > 0)


def test_batch_sampler_keeps_shape(rng):
    sigma = sample_sigma_batch(np.full((5, 3), 4.0), 0.25, np.array([2, 3, 4]), rng)
    assert sigma.shape == (5, 3)


@pytest.mark.parametrize("params", PRIORS)
@pytest.mark.parametrize("n,s", [(10, 7), (25, 25), (8, 0)])
def test_posterior_is_conjugate(params, n, s):
    posterior = posterior_params(params, n, s)
    m = params.m
    grid = np.linspace(0.01, 0.99, 50)
    log_likelihood = (n - s) * np.log(grid) - n * np.log1p((m - 1) * grid)
    difference = log_density_omega(grid, posterior) - log_density_omega(grid, params) - log_likelihood
    assert np.ptp(difference) < 1e-8


def test_posterior_params_domain():
    with pytest.raises(DomainError):
        posterior_params(PRIORS[0], 5, 6)


@pytest.mark.parametrize("n,s", [(10, 7), (30, 12), (4, 4)])
def test_posterior_mode(n, s):
    params = HIGParams(v=4.5, w=0.25, m=4)
    mode = posterior_omega_mode(params, n, s)
    posterior = posterior_params(params, n, s)
    assert mode == pytest.approx(posterior.w / (posterior.v * (params.m - 1)))
    grid = np.linspace(1e-4, 1 - 1e-4, 20001)
    assert grid[np.argmax(log_density_omega(grid, posterior))] == pytest.approx(mode, abs=1e-4)


def test_omega_mean_and_mode():
    params = PRIORS[1]
    mean, mode = omega_mean_and_mode(params)
    expected = _quad(lambda x: x * math.exp(log_density_omega(x, params)), 0.0, 1.0)
    assert mean == pytest.approx(expected, rel=1e-8)
    assert mode == pytest.approx(0.5 / (3.0 * 5))


def test_norm_const_without_scale_weight():
    # w = 0: integral of (1 + (m-1) x)^-v over (0, 1) in closed form
    v, m = 3.0, 2
    expected = (1.0 - m ** (1.0 - v)) / ((v - 1.0) * (m - 1))
    assert math.exp(norm_const_log(HIGParams(v=v, w=0.0, m=m))) == pytest.approx(expected, rel=1e-10)


def test_sampled_omega_peaks_at_prior_mode(rng):
    params = PRIORS[0]
    _, mode = omega_mean_and_mode(params)
    assert mode == pytest.approx(0.0417, abs=1e-4)
    size = 100_000
    sigma = sample_sigma_batch(np.full(size, params.v), np.full(size, params.w), np.full(size, params.m), rng)
    counts, edges = np.histogram(np.exp(-1.0 / sigma), bins=25, range=(0.0, 1.0))
    peak = int(np.argmax(counts))
    assert edges[peak] <= mode < edges[peak + 1]


def test_binary_gini_prior_is_near_uniform(rng):
    draws = gini_prior_montecarlo([PRIORS[0]], 10_000, rng)
    assert stats.kstest(draws, "uniform").statistic < 0.1


def test_marginal_likelihood_matches_quadrature():
    params = HIGParams(v=5.0, w=0.25, m=3)
    column = np.array([0, 0, 1, 0, 2, 0, 0])
    for center in range(3):
        s = int(np.sum(column == center))
        n = column.size

        def integrand(x):
            return math.exp((n - s) * math.log(x) - n * math.log1p(2 * x) + log_density_omega(x, params))

        expected = math.log(_quad(integrand, 0.0, 1.0))
        assert marginal_loglik_column(column, center, params) == pytest.approx(expected, abs=1e-8)


def test_marginal_likelihood_sums_to_one_over_datasets():
    params = [HIGParams(v=3.0, w=0.5, m=6)]
    total = sum(math.exp(marginal_loglik_dataset(np.array(x)[:, None], params))
                for x in itertools.product(range(6), repeat=2))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_marginal_likelihood_domain():
    with pytest.raises(DomainError):
        marginal_loglik_column([0, 3], 0, PRIORS[0])
    with pytest.raises(DomainError):
        marginal_loglik_dataset(np.zeros((3, 2), dtype=int), PRIORS[:1])


def test_gini_prior_sample(rng):
    draws = gini_prior_montecarlo([HIGParams(v=5.0, w=0.25, m=3), HIGParams(v=4.5, w=0.25, m=4)], 500, rng)
    assert draws.shape == (500,)
    assert np.all((draws >= 0.0) & (draws <= 1.0))
    assert 0.0 < np.median(draws) < 1.0
    with pytest.raises(DomainError):
        gini_prior_montecarlo(PRIORS, 0, rng)
