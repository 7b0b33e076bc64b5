"""
Tests for the blocked Gibbs sampler
"""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from conftest import make_dataset
from gibbs import (GibbsSampler, metropolis_log_acceptance, run_chain, run_chains, run_chains_async,
                   successive_conditional)
from hig import log_density_omega, omega_cdf, omega_mean_and_mode, posterior_params
from mixture import prior_k_distribution
from models import ConfigurationError, HIGParams, MixtureState, ModelConfig


def _state(z, L, p, scale=1.0, S=None, u=1.0, centers=None):
    z = np.asarray(z, dtype=np.int64)
    K = int(z.max()) + 1
    return MixtureState(
        z=z,
        S=np.ones(L) if S is None else np.asarray(S, dtype=float),
        centers=np.zeros((L, p), dtype=np.int64) if centers is None else np.asarray(centers),
        scales=np.full((L, p), scale),
        u=u,
        K=K,
    )


def test_step_u_mean(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    state = _state(np.repeat([0, 1], 10), 3, 4, S=[2.0, 3.0, 5.0])
    draws = np.array([sampler.step_u(state, rng).u for _ in range(4000)])
    # Gamma(n, T): mean n / T, sd sqrt(n) / T
    assert draws.mean() == pytest.approx(20 / 10.0, abs=4 * math.sqrt(20) / 10.0 / math.sqrt(4000))


def test_single_component_allocates_everything(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    state = _state(np.zeros(20), 1, 4)
    sampler.step_allocations(state, rng)
    assert np.all(state.z == 0)
    assert state.K == 1


def test_tiny_scales_allocate_exactly(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    centers = np.array([[1, 1, 1, 1], [0, 0, 0, 0]])
    state = _state(np.zeros(20), 2, 4, scale=0.01, centers=centers)
    sampler.step_allocations(state, rng)
    # first row belongs to the component centered at zeros, which is relabeled first
    assert state.z.tolist() == [0] * 10 + [1] * 10
    assert state.centers[0].tolist() == [0, 0, 0, 0]


def test_relabel_moves_allocated_components_first():
    z = np.array([2, 2, 0, 3, 0])
    state = _state(z, 5, 2, S=[1.0, 2.0, 3.0, 4.0, 5.0])
    state.centers = np.arange(10).reshape(5, 2)
    GibbsSampler._relabel(state)
    assert state.z.tolist() == [0, 0, 1, 2, 1]
    assert state.K == 3
    assert state.S.tolist() == [3.0, 1.0, 4.0, 2.0, 5.0]
    assert state.centers[0].tolist() == [4, 5]
    state.check_invariants()


def _nonallocated_pmf(K, u, gamma, lambda_, size):
    rate = lambda_ / (1.0 + u) ** gamma
    zero_shift = K / (K + rate)
    m = np.arange(size)
    pmf = zero_shift * stats.poisson.pmf(m, rate) + (1 - zero_shift) * stats.poisson.pmf(m - 1, rate)
    return pmf


def test_nonallocated_count_distribution(rng):
    codes = np.array([[0, 1], [1, 0], [1, 1], [0, 0]])
    data = make_dataset(codes, [2, 2])
    config = ModelConfig.for_dataset(data, gamma=1.0, lambda_=2.0)
    sampler = GibbsSampler(data, config)
    draws = []
    for _ in range(6000):
        state = _state([0, 1, 2, 0], 3, 2, u=0.5)
        sampler.step_num_nonallocated(state, rng)
        draws.append(state.L - state.K)
    draws = np.array(draws)
    observed = np.bincount(draws, minlength=12)[:6]
    pmf = _nonallocated_pmf(3, 0.5, 1.0, 2.0, 6)
    observed[-1] += np.sum(draws >= 6)
    expected = pmf * draws.size
    expected[-1] += draws.size * (1.0 - pmf.sum())
    _, p_value = stats.chisquare(observed, expected)
    assert p_value > 1e-3


def test_tiny_lambda_adds_no_components(two_groups, rng):
    config = ModelConfig.for_dataset(two_groups, gamma=1.0, lambda_=1e-12)
    sampler = GibbsSampler(two_groups, config)
    for _ in range(200):
        state = _state(np.repeat([0, 1], 10), 2, 4)
        sampler.step_num_nonallocated(state, rng)
        assert state.L == 2


def test_weight_means(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    z = np.array([0] * 15 + [1] * 5)
    draws = np.array([sampler.step_weights(_state(z, 3, 4, u=1.5), rng).S for _ in range(3000)])
    expected = (1.0 + np.array([15, 5, 0])) / 2.5
    sd = np.sqrt(1.0 + np.array([15, 5, 0])) / 2.5
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * sd / math.sqrt(3000))


def test_pure_cluster_center(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    for _ in range(20):
        state = _state(np.repeat([0, 1], 10), 2, 4, scale=0.5)
        sampler.step_params_allocated(state, rng)
        assert state.centers[0].tolist() == [0, 0, 0, 0]
        assert state.centers[1].tolist() == [1, 1, 1, 1]
        assert np.all(state.scales > 0)


def test_nonallocated_centers_are_uniform(rng):
    codes = np.array([[0, 0], [1, 2], [0, 1]])
    data = make_dataset(codes, [2, 3])
    sampler = GibbsSampler(data, ModelConfig.for_dataset(data, gamma=1.0, lambda_=2.0))
    centers = []
    for _ in range(3000):
        state = _state([0, 0, 0], 2, 2)
        sampler.step_params_nonallocated(state, rng)
        centers.append(state.centers[1])
    centers = np.array(centers)
    _, p_second = stats.chisquare(np.bincount(centers[:, 1], minlength=3))
    _, p_first = stats.chisquare(np.bincount(centers[:, 0], minlength=2))
    assert p_first > 1e-3 and p_second > 1e-3


def test_metropolis_ratio_vanishes_for_identical_proposal():
    sigma = np.array([0.4, 1.3])
    ratio = metropolis_log_acceptance(sigma, sigma.copy(), np.array([5.0, 0.0]), np.array([3.0, 0.0]),
                                      np.array([2, 3]), (2.0, 1.0))
    assert np.allclose(ratio, 0.0)


@pytest.mark.slow
def test_metropolis_reproduces_prior_for_empty_component(rng):
    codes = np.array([[0, 0], [1, 2], [0, 1], [1, 1]])
    data = make_dataset(codes, [2, 3])
    config = ModelConfig.for_dataset(data, gamma=1.0, lambda_=2.0, shared_sigma=True, mh_proposal_sd=1.0)
    sampler = GibbsSampler(data, config)
    state = _state([0, 0, 0, 0], 2, 2)
    state.shared_sigma = np.array([1.0, 1.0])
    log_sigma = []
    for t in range(40000):
        sampler.step_shared_sigma(state, rng)
        if t % 5 == 0:
            log_sigma.append(math.log(state.shared_sigma[1]))
    # inverse-gamma(2, 1): E[log sigma] = log(1) - digamma(2)
    assert np.mean(log_sigma) == pytest.approx(-special.digamma(2.0), abs=0.06)
    assert 0.1 < sampler.acceptance_rate < 0.9


def test_conjugate_shared_scale(rng):
    codes = np.array([[0, 0, 0], [0, 1, 0], [2, 0, 0], [0, 0, 1], [1, 1, 1]])
    data = make_dataset(codes, [3, 3, 3])
    config = ModelConfig.for_dataset(data, gamma=1.0, lambda_=2.0, shared_sigma=True)
    sampler = GibbsSampler(data, config)
    assert sampler.conjugate_shared
    state = _state([0, 0, 0, 0, 1], 2, 3)
    state.centers = np.array([[0, 0, 0], [1, 1, 1]])
    state.shared_sigma = np.ones(2)
    draws = np.array([sampler.step_shared_sigma(state, rng).shared_sigma[0] for _ in range(2000)])
    # four members, twelve coordinates, three mismatches
    prior = config.hig_priors[0]
    target = HIGParams(v=prior.v + 12 - 3, w=prior.w + 3, m=3)
    assert target == posterior_params(HIGParams(v=prior.v, w=prior.w, m=3), 12, 9)
    cdf = np.vectorize(lambda x: omega_cdf(float(x), target, "beta"))
    _, p_value = stats.kstest(np.exp(-1.0 / draws), cdf)
    assert p_value > 1e-3
    assert np.allclose(state.scales[0], state.shared_sigma[0])


def test_shared_scale_step_requires_flag(two_groups, two_groups_config, rng):
    sampler = GibbsSampler(two_groups, two_groups_config)
    with pytest.raises(ConfigurationError):
        sampler.step_shared_sigma(_state(np.zeros(20), 1, 4), rng)


def test_identical_rows_settle_on_one_cluster():
    data = make_dataset(np.tile([1, 0, 2], (30, 1)), [2, 2, 3])
    config = ModelConfig.for_dataset(data, gamma=1.0, lambda_=1.0)
    trace = run_chain(data, config, iters=300, burnin=100, thin=1, seed=5)
    assert np.bincount(trace.k).argmax() == 1


def test_chain_records_and_metadata(two_groups, two_groups_config):
    trace = run_chain(two_groups, two_groups_config, iters=50, burnin=10, thin=4, seed=3)
    assert trace.recorded == 10
    assert trace.allocations.shape == (10, 20)
    assert trace.iterations.tolist() == list(range(14, 51, 4))
    assert np.all(trace.k <= trace.l)
    assert trace.allocations.min() == 1
    assert trace.metadata["seed"] == 3
    assert trace.metadata["shared_sigma_mode"] is None
    assert "seconds" in trace.metadata["timings"]


def test_chain_is_reproducible(two_groups, two_groups_config):
    first = run_chain(two_groups, two_groups_config, iters=40, burnin=10, thin=1, seed=11)
    again = run_chain(two_groups, two_groups_config, iters=40, burnin=10, thin=1, seed=11)
    other = run_chain(two_groups, two_groups_config, iters=40, burnin=10, thin=1, seed=11, chain_index=1)
    assert np.array_equal(first.allocations, again.allocations)
    assert np.array_equal(first.u, again.u)
    assert not np.array_equal(first.u, other.u)


def test_two_groups_are_recovered(two_groups, two_groups_config):
    trace = run_chain(two_groups, two_groups_config, iters=200, burnin=50, thin=1, seed=2)
    assert np.bincount(trace.k).argmax() == 2
    truth = np.array([1] * 10 + [2] * 10)
    assert np.mean(np.all(trace.allocations == truth, axis=1)) > 0.5


def test_shared_scale_chain(two_groups):
    config = ModelConfig.for_dataset(two_groups, gamma=1.0, lambda_=2.0, shared_sigma=True)
    trace = run_chain(two_groups, config, iters=40, burnin=10, thin=1, seed=4)
    assert trace.shared_sigma is not None and np.all(trace.shared_sigma > 0)
    assert trace.metadata["shared_sigma_mode"] == "per-component conjugate"


def test_chain_configuration_errors(two_groups, two_groups_config):
    with pytest.raises(ConfigurationError):
        run_chain(two_groups, two_groups_config, iters=10, burnin=10, thin=1, seed=0)
    with pytest.raises(ConfigurationError):
        run_chain(two_groups, two_groups_config, iters=10, burnin=2, thin=0, seed=0)
    wrong = ModelConfig(gamma=1.0, lambda_=2.0, hig_priors=[HIGParams(v=5.0, w=0.25, m=3)] * 4)
    with pytest.raises(ConfigurationError):
        GibbsSampler(two_groups, wrong)


def test_run_chains_orders_by_index(two_groups, two_groups_config):
    traces = run_chains(two_groups, two_groups_config, iters=20, burnin=5, thin=1, seed=9, chains=2)
    assert [t.metadata["chain"] for t in traces] == [0, 1]
    single = run_chain(two_groups, two_groups_config, iters=20, burnin=5, thin=1, seed=9, chain_index=1)
    assert np.array_equal(traces[1].u, single.u)


@pytest.mark.asyncio
async def test_run_chains_async(two_groups, two_groups_config):
    traces = await run_chains_async(two_groups, two_groups_config, iters=20, burnin=5, thin=1,
                                    seed=9, chains=2, workers=1)
    assert len(traces) == 2
    with pytest.raises(ConfigurationError):
        await run_chains_async(two_groups, two_groups_config, 20, 5, 1, 9, chains=0)


def _batch_means_se(values, batches=50):
    values = np.asarray(values, dtype=float)
    size = values.size // batches
    means = values[:size * batches].reshape(batches, size).mean(axis=1)
    return means.std(ddof=1) / math.sqrt(batches)


@pytest.mark.slow
def test_joint_simulation_reproduces_prior_moments():
    modality_counts = [2, 3]
    config = ModelConfig(gamma=1.0, lambda_=2.0,
                         hig_priors=[HIGParams(v=6.0, w=0.25, m=2), HIGParams(v=5.0, w=0.25, m=3)])
    n = 6
    result = successive_conditional(config, n, modality_counts, sweeps=20000, seed=31)
    k_prior = prior_k_distribution(n, 1.0, 2.0)
    omega_prior, _ = omega_mean_and_mode(config.hig_priors[0])
    checks = [(result["K"], k_prior.mean), (result["L"], 3.0), (result["omega"][:, 0], omega_prior)]
    for trace, expected in checks:
        assert abs(trace.mean() - expected) < 4 * _batch_means_se(trace)


def _prior_log_sigma_mean(params):
    # log sigma = -log(-log omega)
    value, _ = integrate.quad(lambda x: -math.log(-math.log(x)) * math.exp(log_density_omega(x, params)),
                              0.0, 1.0, limit=400)
    return value


@pytest.mark.slow
def test_joint_simulation_three_ternary_variables():
    n, p = 8, 3
    prior = HIGParams(v=5.0, w=0.25, m=3)
    config = ModelConfig(gamma=1.0, lambda_=2.0, hig_priors=[prior] * p)
    result = successive_conditional(config, n, [3] * p, sweeps=100_000, seed=47)

    k_prior = prior_k_distribution(n, 1.0, 2.0)
    checks = [(result["K"], k_prior.mean), (result["L"], 3.0)]
    omega_prior, _ = omega_mean_and_mode(prior)
    log_sigma_prior = _prior_log_sigma_mean(prior)
    for j in range(p):
        omega = result["omega"][:, j]
        checks.append((omega, omega_prior))
        checks.append((-np.log(-np.log(omega)), log_sigma_prior))
    for trace, expected in checks:
        assert abs(trace.mean() - expected) < 3 * _batch_means_se(trace)


@pytest.mark.slow
def test_row_order_does_not_change_the_posterior(rng):
    centers = np.array([[0, 0, 0, 0, 0, 0], [1, 1, 1, 1, 1, 1], [2, 2, 0, 1, 2, 2]])
    codes = np.repeat(centers, 15, axis=0)
    flips = rng.random(codes.shape) < 0.1
    codes = np.where(flips, (codes + 1) % 3, codes)
    data = make_dataset(codes, [3] * 6)
    permutation = rng.permutation(data.n)
    shuffled = make_dataset(codes[permutation], [3] * 6)
    config = ModelConfig.for_dataset(data, gamma=1.0, lambda_=3.0)
    first = run_chain(data, config, iters=1500, burnin=500, thin=1, seed=1)
    second = run_chain(shuffled, config, iters=1500, burnin=500, thin=1, seed=2)
    assert abs(first.k.mean() - second.k.mean()) < 0.3
    # co-clustering of the same pair of rows agrees in both orders
    inverse = np.argsort(permutation)
    a, b = 0, 1
    together_first = np.mean(first.allocations[:, a] == first.allocations[:, b])
    together_second = np.mean(second.allocations[:, inverse[a]] == second.allocations[:, inverse[b]])
    assert abs(together_first - together_second) < 0.1
