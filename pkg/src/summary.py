"""
Posterior summaries: similarity matrix, VI point estimate, adjusted Rand
index, Hamming silhouette and conditional cluster parameters.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import special, stats
from sklearn.metrics import adjusted_rand_score, mutual_info_score, silhouette_samples

from data import dissimilarity_matrix
from gibbs import GibbsSampler, _initial_scale
from hamming import gini_normalized, shannon_normalized, sigma_to_epsilon
from models import (CategoricalDataset, ChainTrace, ClusterSummary, DataValidationError,
                    DomainError, MixtureState, ModelConfig, Partition, PriorKDistribution,
                    SimilarityMatrix)

logger = logging.getLogger(__name__)

PartitionLike = Union[Partition, Sequence[int], np.ndarray]


def _as_partition(value: PartitionLike) -> Partition:
    return value if isinstance(value, Partition) else Partition(np.asarray(value))


def _check_trace(trace: ChainTrace) -> np.ndarray:
    allocations = np.asarray(trace.allocations)
    if allocations.ndim != 2 or allocations.shape[0] == 0:
        raise DomainError("trace has no recorded allocations")
    return allocations


def similarity_matrix(trace: ChainTrace, block: int = 512) -> SimilarityMatrix:
    """Fraction of recorded sweeps in which each pair shares a component"""
    allocations = _check_trace(trace)
    records, n = allocations.shape
    labels = allocations - allocations.min()
    width = int(labels.max()) + 1
    psm = np.zeros((n, n))
    for start in range(0, records, block):
        chunk = labels[start:start + block]
        onehot = (chunk[:, :, None] == np.arange(width)[None, None, :]).astype(float)
        stacked = onehot.transpose(1, 0, 2).reshape(n, -1)
        psm += stacked @ stacked.T
    psm /= records
    np.fill_diagonal(psm, 1.0)
    return SimilarityMatrix(values=np.clip(psm, 0.0, 1.0))


def _entropy(labels: np.ndarray) -> float:
    counts = np.bincount(labels)
    return float(stats.entropy(counts[counts > 0]))


def vi_distance(a: PartitionLike, b: PartitionLike) -> float:
    """Variation of information with natural-log entropies"""
    a, b = _as_partition(a), _as_partition(b)
    if a.n != b.n:
        raise DataValidationError(f"partitions have different lengths ({a.n} vs {b.n})")
    value = _entropy(a.labels) + _entropy(b.labels) - 2.0 * mutual_info_score(a.labels, b.labels)
    return float(max(value, 0.0))


def _canonical_rows(allocations: np.ndarray) -> np.ndarray:
    return np.vstack([Partition(row).labels for row in allocations])


def expected_vi(candidates: np.ndarray, draws: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean VI from each candidate partition to a set of draws

    VI(c, u) = 2 H(c, u) - H(c) - H(u), with joint entropies from label
    contingency counts gathered for all draws at once.
    """
    n = draws.shape[1]
    width = int(draws.max())
    draw_sizes = np.apply_along_axis(np.bincount, 1, draws, minlength=width + 1)
    entropy_draws = np.log(n) - special.xlogy(draw_sizes, draw_sizes).sum(axis=1) / n
    offsets = np.arange(draws.shape[0])[:, None]
    out = np.empty(candidates.shape[0])
    for idx, candidate in enumerate(candidates):
        k_c = int(candidate.max())
        sizes = np.bincount(candidate)
        entropy_c = np.log(n) - special.xlogy(sizes, sizes).sum() / n
        cells = width * k_c
        key = (draws - 1) * k_c + (candidate[None, :] - 1) + offsets * cells
        joint = np.bincount(key.ravel(), minlength=draws.shape[0] * cells).reshape(draws.shape[0], cells)
        entropy_joint = np.log(n) - special.xlogy(joint, joint).sum(axis=1) / n
        out[idx] = float(np.dot(weights, 2.0 * entropy_joint - entropy_c - entropy_draws))
    return out


def point_estimate_vi(trace: ChainTrace, max_candidates: Optional[int] = None) -> Partition:
    """Recorded partition minimizing the Monte Carlo posterior expected VI

    Ties go to fewer clusters, then to the earliest recorded occurrence.
    """
    allocations = _canonical_rows(_check_trace(trace))
    unique, first, counts = np.unique(allocations, axis=0, return_index=True, return_counts=True)
    weights = counts / counts.sum()

    candidate_idx = np.arange(unique.shape[0])
    if max_candidates is not None and unique.shape[0] > max_candidates:
        order = np.lexsort((first, -counts))
        candidate_idx = np.sort(order[:max_candidates])
        logger.info(f"Restricting VI candidates to the {max_candidates} most frequent of {unique.shape[0]}")
    logger.info(f"Scoring {candidate_idx.size} candidate partitions against {unique.shape[0]} distinct draws")

    scores = expected_vi(unique[candidate_idx], unique, weights)
    best = scores.min()
    tied = candidate_idx[scores <= best + 1e-12 * max(1.0, abs(best))]
    k_values = unique[tied].max(axis=1)
    tied = tied[k_values == k_values.min()]
    chosen = tied[np.argmin(first[tied])]
    logger.info(f"VI point estimate has K={int(unique[chosen].max())} "
                f"(expected VI {best:.4f}, {unique.shape[0]} distinct partitions)")
    return Partition(unique[chosen])


def adjusted_rand_index(a: PartitionLike, b: PartitionLike) -> float:
    """Adjusted Rand index under the permutation model"""
    a, b = _as_partition(a), _as_partition(b)
    if a.n != b.n:
        raise DataValidationError(f"partitions have different lengths ({a.n} vs {b.n})")
    return float(adjusted_rand_score(a.labels, b.labels))


@dataclass
class SilhouetteResult:
    """Silhouette widths under Hamming dissimilarity"""
    widths: np.ndarray
    cluster_means: np.ndarray
    overall: float


def silhouette_hamming(data: CategoricalDataset, partition: PartitionLike) -> SilhouetteResult:
    """Classical silhouette widths; singletons get width 0"""
    partition = _as_partition(partition)
    if partition.n != data.n:
        raise DataValidationError("partition length does not match the dataset")
    if partition.K < 2:
        raise DomainError("silhouette is undefined for a single cluster")
    if partition.K == partition.n:
        widths = np.zeros(partition.n)
    else:
        widths = silhouette_samples(dissimilarity_matrix(data), partition.labels, metric="precomputed")
    cluster_means = np.array([widths[partition.labels == k].mean() for k in range(1, partition.K + 1)])
    return SilhouetteResult(widths=widths, cluster_means=cluster_means, overall=float(widths.mean()))


def _empirical_modes(data: CategoricalDataset, labels: np.ndarray, K: int) -> np.ndarray:
    modes = np.empty((K, data.p), dtype=np.int64)
    for k in range(K):
        rows = data.codes[labels == k]
        for j, m in enumerate(data.modality_counts):
            modes[k, j] = int(np.argmax(np.bincount(rows[:, j], minlength=m)))
    return modes


def conditional_param_summary(data: CategoricalDataset, partition: PartitionLike, config: ModelConfig,
                              extra_iters: int, rng: np.random.Generator) -> List[ClusterSummary]:
    """Draws of the allocated-component parameters with z frozen at the partition,
    summarized by the modal center and the median scale of every variable"""
    partition = _as_partition(partition)
    if partition.n != data.n:
        raise DataValidationError("partition length does not match the dataset")
    if extra_iters < 1:
        raise DomainError(f"extra_iters must be >= 1, got {extra_iters}")

    sampler = GibbsSampler(data, config)
    K = partition.K
    z = partition.labels - 1
    base = np.array([_initial_scale(h) for h in config.hig_priors])
    shared = None
    scales = np.tile(base, (K, 1))
    if config.shared_sigma:
        shared = np.full(K, float(np.median(base)))
        scales = np.tile(shared[:, None], (1, data.p))
    state = MixtureState(z=z.copy(), S=np.ones(K), centers=_empirical_modes(data, z, K),
                         scales=scales, u=1.0, K=K, shared_sigma=shared)

    center_draws = np.empty((extra_iters, K, data.p), dtype=np.int64)
    scale_draws = np.empty((extra_iters, K, data.p))
    for t in range(extra_iters):
        sampler.resample_parameters(state, rng)
        center_draws[t] = state.centers[:K]
        scale_draws[t] = state.scales[:K]

    m = data.modality_counts
    sigma_median = np.median(scale_draws, axis=0)
    epsilon_median = np.median(sigma_to_epsilon(scale_draws, m[None, None, :]), axis=0)
    sizes = partition.sizes
    summaries = []
    for k in range(K):
        center = np.array([int(np.argmax(np.bincount(center_draws[:, k, j], minlength=m[j])))
                           for j in range(data.p)])
        summaries.append(ClusterSummary(
            label=k + 1,
            size=int(sizes[k]),
            center=center,
            center_labels=data.decode_vector(center),
            sigma_median=sigma_median[k],
            epsilon_median=epsilon_median[k],
            gini=gini_normalized(sigma_median[k], m),
            shannon=shannon_normalized(sigma_median[k], m),
        ))
    return summaries


def posterior_k_table(trace: ChainTrace) -> pd.DataFrame:
    """Frequency of each number of clusters across recorded sweeps"""
    k_values = np.asarray(trace.k)
    if k_values.size == 0:
        raise DomainError("trace has no recorded sweeps")
    values, counts = np.unique(k_values, return_counts=True)
    return pd.DataFrame({"K": values, "count": counts, "posterior": counts / counts.sum()})


def k_distribution_table(trace: ChainTrace, prior: PriorKDistribution) -> pd.DataFrame:
    """Prior and posterior probabilities of K side by side"""
    posterior = posterior_k_table(trace).set_index("K")["posterior"]
    frame = pd.DataFrame({"K": prior.k_values, "prior": prior.probabilities})
    frame["posterior"] = frame["K"].map(posterior).fillna(0.0)
    return frame
