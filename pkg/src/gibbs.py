"""
Blocked Gibbs sampler for mixtures of Hamming distributions with a random
number of components.

One sweep updates, in order: the auxiliary variable u, the allocations z,
the number of non-allocated components, the unnormalized weights S, the
allocated component parameters, the non-allocated component parameters and,
when enabled, the per-component shared scale.
"""

import asyncio
import math
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from config import sampler_config
from data import hamming_to_centers
from hamming import clamp_scale, log_normalizer, log_pmf_matrix, sample_rows
from hig import omega_mean_and_mode, sample_sigma_batch
from mixture import sample_generative
from models import (CategoricalDataset, ChainTrace, ConfigurationError, HIGParams, MixtureState,
                    ModelConfig)
from numerics import categorical_from_log_weights, shifted_poisson_sample, spawn_generator

logger = structlog.get_logger(__name__)

_TINY = np.finfo(float).tiny


def _initial_scale(params: HIGParams) -> float:
    """sigma at the prior omega-mode (prior mean when the mode sits at 1)"""
    mean, mode = omega_mean_and_mode(params)
    omega = mode if mode < 1.0 else mean
    return float(clamp_scale(-1.0 / math.log(omega)))


def shared_sigma_log_target(sigma: np.ndarray, sizes: np.ndarray, distance_sums: np.ndarray,
                            modality_counts: np.ndarray, prior: Sequence[float]) -> np.ndarray:
    """Log target of log(sigma) for the per-component shared scale

    Inverse-gamma(a, b) prior times the Hamming likelihood of the component's
    members, plus the log-Jacobian of the log transform.
    """
    a, b = prior
    sigma = np.asarray(sigma, dtype=float)
    log_norm = log_normalizer(sigma[:, None], modality_counts[None, :]).sum(axis=1)
    return (-(a + 1.0) * np.log(sigma) - b / sigma
            - sizes * log_norm - distance_sums / sigma + np.log(sigma))


def metropolis_log_acceptance(current: np.ndarray, proposal: np.ndarray, sizes: np.ndarray,
                              distance_sums: np.ndarray, modality_counts: np.ndarray,
                              prior: Sequence[float]) -> np.ndarray:
    """Log acceptance ratio of the random-walk move on log(sigma)"""
    return (shared_sigma_log_target(proposal, sizes, distance_sums, modality_counts, prior)
            - shared_sigma_log_target(current, sizes, distance_sums, modality_counts, prior))


class GibbsSampler:
    """Blocked Gibbs sampler bound to one dataset and model configuration"""

    def __init__(self, data: CategoricalDataset, config: ModelConfig):
        """Validate the configuration against the data and precompute tables"""
        config.check_dataset(data)
        self.data = data
        self.config = config
        self.n, self.p = data.n, data.p
        self.m = data.modality_counts
        self.m_max = int(self.m.max())
        self.valid = np.arange(self.m_max)[None, :] < self.m[:, None]
        self.v = np.array([h.v for h in config.hig_priors], dtype=float)
        self.w = np.array([h.w for h in config.hig_priors], dtype=float)
        self.gamma = float(config.gamma)
        self.lambda_ = float(config.lambda_)
        self.shared = bool(config.shared_sigma)
        self.conjugate_shared = self.shared and config.equal_modalities
        self.mh_proposed = 0
        self.mh_accepted = 0
        self._load_codes(data.codes)

    def _load_codes(self, codes: np.ndarray) -> None:
        self.codes = np.asarray(codes, dtype=np.int64)
        onehot = self.codes[:, :, None] == np.arange(self.m_max)[None, None, :]
        self.onehot = onehot.reshape(self.n, -1).astype(float)

    @property
    def acceptance_rate(self) -> float:
        if self.mh_proposed == 0:
            return float("nan")
        return self.mh_accepted / self.mh_proposed

    # ------------------------------------------------------------------
    # State handling
    # ------------------------------------------------------------------

    def initialize_state(self, rng: np.random.Generator) -> MixtureState:
        """Dispersed reproducible start: L = round(1 + lambda) data rows as
        provisional centers, greedy nearest-center allocation, scales at the
        prior omega-mode, weights at their prior mean"""
        L = int(min(max(1, round(1.0 + self.lambda_)), self.n))
        rows = rng.choice(self.n, size=L, replace=False)
        centers = self.codes[rows].copy()
        z = np.argmin(hamming_to_centers(self.codes, centers), axis=1)

        base = np.array([_initial_scale(h) for h in self.config.hig_priors])
        shared = None
        if self.shared:
            if self.conjugate_shared:
                level = _initial_scale(self.config.hig_priors[0])
            else:
                a, b = self.config.shared_sigma_prior
                level = b / (a + 1.0)
            shared = np.full(L, level)
            scales = np.tile(shared[:, None], (1, self.p))
        else:
            scales = np.tile(base, (L, 1))

        state = MixtureState(z=z, S=np.full(L, self.gamma), centers=centers, scales=scales,
                             u=1.0, K=L, shared_sigma=shared)
        self._relabel(state)
        state.u = self.n / state.T
        return state

    def state_from_truth(self, allocations: np.ndarray, weights: np.ndarray, centers: np.ndarray,
                         scales: np.ndarray, rng: np.random.Generator) -> MixtureState:
        """State built from generative draws (used to start joint simulations)"""
        if self.shared:
            raise ConfigurationError("joint simulation supports component-specific scales only")
        state = MixtureState(z=np.asarray(allocations).copy(), S=np.asarray(weights, dtype=float).copy(),
                             centers=np.asarray(centers).copy(), scales=np.asarray(scales, dtype=float).copy(),
                             u=1.0, K=int(weights.shape[0]))
        self._relabel(state)
        state.u = float(rng.gamma(self.n, 1.0 / state.T))
        return state

    @staticmethod
    def _relabel(state: MixtureState) -> None:
        """Move allocated components to 0..K-1 in order of first appearance"""
        allocated, first = np.unique(state.z, return_index=True)
        allocated = allocated[np.argsort(first, kind="stable")]
        empty = np.setdiff1d(np.arange(state.L), allocated)
        order = np.concatenate([allocated, empty])
        inverse = np.empty(state.L, dtype=np.int64)
        inverse[order] = np.arange(state.L)
        state.z = inverse[state.z]
        state.S = state.S[order]
        state.centers = state.centers[order]
        state.scales = state.scales[order]
        if state.shared_sigma is not None:
            state.shared_sigma = state.shared_sigma[order]
        state.K = int(allocated.shape[0])

    def _cluster_counts(self, state: MixtureState, K: int) -> np.ndarray:
        """K x p x m_max table of modality counts per cluster"""
        membership = (state.z[:, None] == np.arange(K)[None, :]).astype(float)
        return (membership.T @ self.onehot).reshape(K, self.p, self.m_max)

    # ------------------------------------------------------------------
    # Sweep steps
    # ------------------------------------------------------------------

    def step_u(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """u | rest ~ Gamma(n, T) (shape, rate)"""
        state.u = float(rng.gamma(self.n, 1.0 / state.T))
        return state

    def step_allocations(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Redraw every z_i with weights S_l p(x_i | c_l, sigma_l), then relabel"""
        log_weights = np.log(state.S)[None, :] + log_pmf_matrix(self.codes, state.centers,
                                                                 state.scales, self.m)
        state.z = categorical_from_log_weights(log_weights, rng)
        self._relabel(state)
        return state

    def step_num_nonallocated(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Draw the number of empty components from its two-atom shifted-Poisson mixture"""
        K = state.K
        log_scale = self.gamma * math.log1p(state.u)
        rate = self.lambda_ * math.exp(-log_scale)
        zero_shift = K / (K + self.lambda_ * math.exp(-log_scale))
        shift = 0 if rng.random() < zero_shift else 1
        n_empty = shifted_poisson_sample(shift, rate, rng)

        state.S = np.concatenate([state.S[:K], np.full(n_empty, np.nan)])
        state.centers = np.vstack([state.centers[:K], np.full((n_empty, self.p), -1, dtype=np.int64)])
        state.scales = np.vstack([state.scales[:K], np.full((n_empty, self.p), np.nan)])
        if state.shared_sigma is not None:
            state.shared_sigma = np.concatenate([state.shared_sigma[:K], np.full(n_empty, np.nan)])
        return state

    def step_weights(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """S_l ~ Gamma(gamma + n_l, u + 1) (shape, rate); n_l = 0 when empty"""
        sizes = np.bincount(state.z, minlength=state.L)
        state.S = np.maximum(rng.gamma(self.gamma + sizes, 1.0 / (state.u + 1.0)), _TINY)
        return state

    def step_params_allocated(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Centers from their m_j-point full conditionals, then sigma from HIG(v*, w*)"""
        K = state.K
        counts = self._cluster_counts(state, K)
        if self.shared:
            scale = np.broadcast_to(state.shared_sigma[:K, None], (K, self.p))
        else:
            scale = state.scales[:K]
        logits = np.where(self.valid[None, :, :], counts / scale[:, :, None], -np.inf)
        centers = categorical_from_log_weights(logits, rng)
        state.centers[:K] = centers

        if not self.shared:
            matches = np.take_along_axis(counts, centers[:, :, None], axis=2)[:, :, 0]
            sizes = counts[:, 0, :].sum(axis=1)
            v_star = self.v[None, :] + matches
            w_star = self.w[None, :] + sizes[:, None] - matches
            state.scales[:K] = sample_sigma_batch(v_star, w_star, self.m[None, :], rng)
        return state

    def step_params_nonallocated(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Empty components: uniform centers and prior scales"""
        K, L = state.K, state.L
        if L == K:
            return state
        n_empty = L - K
        state.centers[K:] = rng.integers(0, self.m[None, :], size=(n_empty, self.p))
        if self.shared:
            state.shared_sigma[K:] = self._draw_shared_prior(n_empty, rng)
            state.scales[K:] = state.shared_sigma[K:, None]
        else:
            state.scales[K:] = sample_sigma_batch(np.tile(self.v, (n_empty, 1)),
                                                  np.tile(self.w, (n_empty, 1)),
                                                  np.tile(self.m, (n_empty, 1)), rng)
        return state

    def _draw_shared_prior(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.conjugate_shared:
            prior = self.config.hig_priors[0]
            return sample_sigma_batch(np.full(size, prior.v), np.full(size, prior.w),
                                      np.full(size, prior.m), rng)
        a, b = self.config.shared_sigma_prior
        return clamp_scale(b / rng.gamma(a, 1.0, size=size))

    def step_shared_sigma(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Per-component sigma common to all variables

        Conjugate HIG(v + n_l p - D_l, w + D_l) draw when every variable has the
        same modality count, otherwise one random-walk Metropolis move on log(sigma)
        targeting the inverse-gamma prior times the members' likelihood.
        """
        if not self.shared:
            raise ConfigurationError("step_shared_sigma requires shared_sigma")
        L = state.L
        sizes = np.bincount(state.z, minlength=L).astype(float)
        distance = (self.codes != state.centers[state.z]).sum(axis=1)
        distance_sums = np.bincount(state.z, weights=distance, minlength=L)

        if self.conjugate_shared:
            prior = self.config.hig_priors[0]
            v_star = prior.v + sizes * self.p - distance_sums
            w_star = prior.w + distance_sums
            state.shared_sigma = sample_sigma_batch(v_star, w_star, np.full(L, prior.m), rng)
        else:
            current = state.shared_sigma
            proposal = clamp_scale(np.exp(np.log(current) + self.config.mh_proposal_sd
                                          * rng.standard_normal(L)))
            log_ratio = metropolis_log_acceptance(current, proposal, sizes, distance_sums,
                                                  self.m, self.config.shared_sigma_prior)
            accept = np.log(rng.random(L)) < log_ratio
            state.shared_sigma = np.where(accept, proposal, current)
            self.mh_proposed += L
            self.mh_accepted += int(accept.sum())

        state.scales = np.tile(state.shared_sigma[:, None], (1, self.p))
        return state

    def sweep(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """One full pass of the sampler in its fixed step order"""
        self.step_u(state, rng)
        self.step_allocations(state, rng)
        self.step_num_nonallocated(state, rng)
        self.step_weights(state, rng)
        self.step_params_allocated(state, rng)
        self.step_params_nonallocated(state, rng)
        if self.shared:
            self.step_shared_sigma(state, rng)
        if __debug__:
            state.check_invariants()
        return state

    def resample_parameters(self, state: MixtureState, rng: np.random.Generator) -> MixtureState:
        """Allocated-component updates with z held fixed"""
        self.step_params_allocated(state, rng)
        if self.shared:
            self.step_shared_sigma(state, rng)
        return state

    # ------------------------------------------------------------------
    # Chain driver
    # ------------------------------------------------------------------

    def run(self, iters: int, burnin: int, thin: int, rng: np.random.Generator,
            chain_index: int = 0, progress_every: Optional[int] = None) -> ChainTrace:
        """Run a chain and record post burn-in thinned sweeps"""
        progress_every = progress_every or sampler_config.PROGRESS_EVERY
        recorded = (iters - burnin) // thin
        iterations = np.empty(recorded, dtype=np.int64)
        k_trace = np.empty(recorded, dtype=np.int64)
        l_trace = np.empty(recorded, dtype=np.int64)
        u_trace = np.empty(recorded)
        shared_trace = np.empty(recorded) if self.shared else None
        acceptance = np.empty(recorded) if self.shared else None
        allocations = np.empty((recorded, self.n), dtype=np.int32)
        centers: List[np.ndarray] = []
        scales: List[np.ndarray] = []

        state = self.initialize_state(rng)
        logger.info("chain_started", chain=chain_index, iters=iters, burnin=burnin, thin=thin,
                    K0=state.K, L0=state.L)
        record = 0
        for t in range(1, iters + 1):
            self.sweep(state, rng)
            if t > burnin and (t - burnin) % thin == 0:
                iterations[record] = t
                k_trace[record] = state.K
                l_trace[record] = state.L
                u_trace[record] = state.u
                if self.shared:
                    shared_trace[record] = float(np.mean(state.shared_sigma[:state.K]))
                    acceptance[record] = self.acceptance_rate
                allocations[record] = state.labels
                centers.append(state.centers[:state.K].copy())
                scales.append(state.scales[:state.K].copy())
                record += 1
            if t % progress_every == 0:
                logger.info("chain_progress", chain=chain_index, iteration=t, K=state.K, L=state.L)

        return ChainTrace(iterations=iterations, k=k_trace, l=l_trace, u=u_trace,
                          allocations=allocations, shared_sigma=shared_trace,
                          acceptance_rate=acceptance, centers=centers, scales=scales)


def _shared_sigma_mode(config: ModelConfig) -> Optional[str]:
    if not config.shared_sigma:
        return None
    return "per-component conjugate" if config.equal_modalities else "per-component metropolis"


def run_chain(data: CategoricalDataset, config: ModelConfig, iters: int, burnin: int, thin: int,
              seed: int, chain_index: int = 0) -> ChainTrace:
    """Run one chain with the stream derived from (seed, chain_index)"""
    if not 0 <= burnin < iters:
        raise ConfigurationError(f"need iters > burnin >= 0, got iters={iters}, burnin={burnin}")
    if thin < 1:
        raise ConfigurationError(f"thin must be >= 1, got {thin}")
    sampler = GibbsSampler(data, config)
    rng = spawn_generator(seed, chain_index)

    started = time.perf_counter()
    try:
        trace = sampler.run(iters, burnin, thin, rng, chain_index=chain_index)
    except Exception as e:
        logger.error("chain_failed", chain=chain_index, error=str(e))
        raise
    seconds = time.perf_counter() - started

    trace.metadata = {
        "seed": int(seed),
        "chain": int(chain_index),
        "iters": int(iters),
        "burnin": int(burnin),
        "thin": int(thin),
        "recorded": trace.recorded,
        "config": config.echo(),
        "shared_sigma_mode": _shared_sigma_mode(config),
        "acceptance_rate": None if math.isnan(sampler.acceptance_rate) else sampler.acceptance_rate,
        "timings": {
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "seconds": seconds,
        },
    }
    logger.info("chain_finished", chain=chain_index, seconds=round(seconds, 2),
                recorded=trace.recorded, K_last=int(trace.k[-1]) if trace.recorded else None)
    return trace


async def run_chains_async(data: CategoricalDataset, config: ModelConfig, iters: int, burnin: int,
                           thin: int, seed: int, chains: int = 1, workers: int = 1) -> List[ChainTrace]:
    """Run chains concurrently in a process pool; results ordered by chain index"""
    if chains < 1:
        raise ConfigurationError(f"chains must be >= 1, got {chains}")
    if workers <= 1 or chains == 1:
        return [run_chain(data, config, iters, burnin, thin, seed, c) for c in range(chains)]

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=min(workers, chains)) as executor:
        tasks = [loop.run_in_executor(executor, run_chain, data, config, iters, burnin, thin, seed, c)
                 for c in range(chains)]
        return list(await asyncio.gather(*tasks))


def run_chains(data: CategoricalDataset, config: ModelConfig, iters: int, burnin: int, thin: int,
               seed: int, chains: int = 1, workers: int = 1) -> List[ChainTrace]:
    """Synchronous wrapper around run_chains_async"""
    return asyncio.run(run_chains_async(data, config, iters, burnin, thin, seed, chains, workers))


def successive_conditional(config: ModelConfig, n: int, modality_counts: Sequence[int],
                           sweeps: int, seed: int) -> Dict[str, np.ndarray]:
    """Joint-distribution simulator alternating data resampling and sweeps

    Starts from a draw of the full model; its stationary law is the joint
    prior, so recorded K, L and the omega of every variable (component of
    the first observation) must reproduce prior moments.
    """
    m = np.asarray(modality_counts, dtype=np.int64)
    rng = spawn_generator(seed, 0)
    draw = sample_generative(n, m, config, rng)
    sampler = GibbsSampler(draw.dataset, config)
    state = sampler.state_from_truth(draw.allocations, draw.weights, draw.centers, draw.scales, rng)

    k_trace = np.empty(sweeps, dtype=np.int64)
    l_trace = np.empty(sweeps, dtype=np.int64)
    omega_trace = np.empty((sweeps, m.shape[0]))
    for t in range(sweeps):
        sampler.sweep(state, rng)
        k_trace[t] = state.K
        l_trace[t] = state.L
        omega_trace[t] = np.exp(-1.0 / state.scales[state.z[0]])
        codes = sample_rows(state.centers[state.z], state.scales[state.z], m, rng)
        sampler._load_codes(codes)
    return {"K": k_trace, "L": l_trace, "omega": omega_trace}
