"""
Mixture prior with a random number of components: eppf, prior on the number
of clusters, elicitation of gamma and the generative sampler.

L - 1 ~ Poisson(lambda), S_l ~ Gamma(gamma, 1), P(z_i = l) = S_l / sum(S).
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from config import numerics_config
from hamming import sample_rows
from hig import sample_sigma_batch
from models import (Alphabet, CategoricalDataset, CenteringStatistic, DomainError, ModelConfig,
                    NumericalError, Partition, PartitionSizes, PriorKDistribution,
                    PriorNormalizationError)
from numerics import categorical_from_log_weights, log_gen_factorial_row, v_integral_log

logger = logging.getLogger(__name__)

GAMMA_BRACKET = (1e-4, 1e3)


@lru_cache(maxsize=20000)
def _log_v(n: int, K: int, gamma: float, lambda_: float) -> float:
    return v_integral_log(n, K, gamma, lambda_)


def eppf_log(sizes: Union[PartitionSizes, Sequence[int]], config: ModelConfig) -> float:
    """ln prior probability of any one partition with the given block sizes"""
    if not isinstance(sizes, PartitionSizes):
        sizes = PartitionSizes(tuple(sizes))
    gamma = float(config.gamma)
    block = np.asarray(sizes.sizes, dtype=float)
    log_blocks = float(np.sum(special.gammaln(gamma + block)) - sizes.K * special.gammaln(gamma))
    return _log_v(sizes.n, sizes.K, gamma, float(config.lambda_)) + log_blocks


def prior_k_distribution(n: int, gamma: float, lambda_: float) -> PriorKDistribution:
    """P(K = k) for k = 1..n, renormalized; the pre-normalization defect is kept"""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    log_d = log_gen_factorial_row(int(n), float(gamma))[1:]
    log_v = np.array([_log_v(int(n), k, float(gamma), float(lambda_)) for k in range(1, n + 1)])
    log_p = log_v + log_d
    total = special.logsumexp(log_p)
    defect = abs(math.expm1(total))
    if defect > numerics_config.PRIOR_K_MAX_DEFECT:
        raise PriorNormalizationError(f"prior on K for n={n}, gamma={gamma}, lambda={lambda_} "
                                      "does not normalize", defect=defect)
    if defect > numerics_config.PRIOR_K_WARN_DEFECT:
        logger.warning(f"Prior on K renormalized with defect {defect:.2e} (n={n})")
    return PriorKDistribution(probabilities=np.exp(log_p - total), defect=defect)


def prior_k_pmf(n: int, config: ModelConfig) -> PriorKDistribution:
    """Prior distribution of the number of clusters among n observations"""
    return prior_k_distribution(n, float(config.gamma), float(config.lambda_))


def _statistic(n: int, gamma: float, lambda_: float, statistic: CenteringStatistic) -> float:
    dist = prior_k_distribution(n, gamma, lambda_)
    return dist.mean if statistic is CenteringStatistic.MEAN else float(dist.mode)


def elicit_gamma(n: int, lambda_: float, k_target: int,
                 statistic: Union[CenteringStatistic, str] = CenteringStatistic.MEAN,
                 tolerance: float = 0.05, scan_points: int = 15) -> float:
    """gamma whose prior on K is centered on k_target

    The mean is matched to within `tolerance` by bisection on ln gamma; for the
    mode the smallest gamma whose prior mode equals k_target is returned.
    """
    statistic = CenteringStatistic(statistic)
    if not 1 <= k_target <= n:
        raise DomainError(f"k_target must lie in 1..n, got {k_target} with n={n}")
    if not lambda_ > 0:
        raise DomainError(f"lambda must be positive, got {lambda_}")

    grid = np.linspace(math.log(GAMMA_BRACKET[0]), math.log(GAMMA_BRACKET[1]), scan_points)
    values = np.array([_statistic(n, math.exp(g), lambda_, statistic) for g in grid])
    if np.any(np.diff(values) < -1e-9):
        raise NumericalError(f"prior {statistic.value} of K is not monotone in gamma: {values.tolist()}")
    if not values[0] - tolerance <= k_target <= values[-1] + tolerance:
        raise DomainError(f"k_target={k_target} unreachable: prior {statistic.value} of K ranges "
                          f"over [{values[0]:.3f}, {values[-1]:.3f}] for gamma in {GAMMA_BRACKET}")

    if statistic is CenteringStatistic.MEAN:
        close = np.flatnonzero(np.abs(values - k_target) <= tolerance)
        if close.size:
            idx = int(close[np.argmin(np.abs(values[close] - k_target))])
            lo = hi = grid[idx]
        else:
            idx = int(np.searchsorted(values, k_target))
            lo, hi = grid[idx - 1], grid[idx]
        mid = 0.5 * (lo + hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            value = _statistic(n, math.exp(mid), lambda_, statistic)
            if abs(value - k_target) <= tolerance or hi - lo < 1e-12:
                break
            if value < k_target:
                lo = mid
            else:
                hi = mid
        gamma = math.exp(mid)
    else:
        # smallest gamma with mode >= k_target
        idx = int(np.searchsorted(values, k_target))
        if idx == 0:
            gamma = GAMMA_BRACKET[0]
        else:
            lo, hi = grid[idx - 1], grid[idx]
            while hi - lo > 1e-6:
                mid = 0.5 * (lo + hi)
                if _statistic(n, math.exp(mid), lambda_, statistic) >= k_target:
                    hi = mid
                else:
                    lo = mid
            gamma = math.exp(hi)
        achieved = _statistic(n, gamma, lambda_, statistic)
        if achieved != k_target:
            raise DomainError(f"prior mode of K jumps past {k_target} (reaches {achieved:.0f})")

    logger.info(f"Elicited gamma={gamma:.5f} for n={n}, lambda={lambda_}, "
                f"K*={k_target} ({statistic.value})")
    return gamma


@dataclass
class GenerativeSample:
    """Data and ground truth drawn from the full model"""
    dataset: CategoricalDataset
    partition: Partition
    allocations: np.ndarray
    weights: np.ndarray
    centers: np.ndarray
    scales: np.ndarray

    @property
    def L(self) -> int:
        return int(self.weights.shape[0])


def sample_prior_allocations(n: int, gamma: float, lambda_: float,
                             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (weights S, allocations z) from the prior; z uses 0-based component indices"""
    L = 1 + int(rng.poisson(lambda_))
    weights = np.maximum(rng.gamma(gamma, 1.0, size=L), np.finfo(float).tiny)
    log_w = np.broadcast_to(np.log(weights), (n, L))
    return weights, categorical_from_log_weights(log_w, rng)


def sample_generative(n: int, modality_counts: Sequence[int], config: ModelConfig,
                      rng: np.random.Generator, p: Optional[int] = None) -> GenerativeSample:
    """Simulate a dataset from the complete hierarchy"""
    m = np.asarray(modality_counts, dtype=np.int64)
    if p is not None and p != m.shape[0]:
        raise DomainError(f"p={p} does not match {m.shape[0]} modality counts")
    if len(config.hig_priors) != m.shape[0]:
        raise DomainError("config needs one HIG prior per variable")

    weights, z = sample_prior_allocations(n, float(config.gamma), float(config.lambda_), rng)
    L = weights.shape[0]
    centers = rng.integers(0, m[None, :], size=(L, m.shape[0]))
    v = np.array([h.v for h in config.hig_priors])
    w = np.array([h.w for h in config.hig_priors])
    scales = sample_sigma_batch(np.tile(v, (L, 1)), np.tile(w, (L, 1)), np.tile(m, (L, 1)), rng)
    codes = sample_rows(centers[z], scales[z], m, rng)

    alphabets = tuple(Alphabet(tuple(str(h) for h in range(mj))) for mj in m)
    names = tuple(f"V{j + 1}" for j in range(m.shape[0]))
    dataset = CategoricalDataset(codes=codes, alphabets=alphabets, variable_names=names)
    return GenerativeSample(dataset=dataset, partition=Partition(z), allocations=z,
                            weights=weights, centers=centers, scales=scales)
