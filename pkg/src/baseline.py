"""
K-modes baseline for categorical clustering with multiple random restarts.
"""

import logging
from typing import List, Optional

import numpy as np

from config import sampler_config
from data import hamming_to_centers
from models import CategoricalDataset, DomainError, KModesResult, Partition, SamplerError
from summary import adjusted_rand_index

logger = logging.getLogger(__name__)


class KModes:
    """Huang-style K-modes under simple matching dissimilarity

    Assignment ties go to the lowest cluster index, mode ties to the lowest code.
    """

    def __init__(self, data: CategoricalDataset, n_clusters: int, max_iter: Optional[int] = None):
        if not 1 <= n_clusters <= data.n:
            raise DomainError(f"K must lie in 1..n, got K={n_clusters} with n={data.n}")
        self.data = data
        self.codes = data.codes
        self.K = int(n_clusters)
        self.max_iter = int(max_iter or sampler_config.KMODES_MAX_ITER)
        m_max = int(data.modality_counts.max())
        self.m_max = m_max
        self.valid = np.arange(m_max)[None, :] < data.modality_counts[:, None]
        onehot = self.codes[:, :, None] == np.arange(m_max)[None, None, :]
        self.onehot = onehot.reshape(data.n, -1).astype(float)

    def init_modes(self, rng: np.random.Generator) -> np.ndarray:
        """K distinct data rows chosen at random"""
        distinct = np.unique(self.codes, axis=0)
        if distinct.shape[0] >= self.K:
            return distinct[np.sort(rng.choice(distinct.shape[0], size=self.K, replace=False))].copy()
        logger.warning(f"Only {distinct.shape[0]} distinct rows for K={self.K}; some modes repeat")
        return self.codes[rng.choice(self.data.n, size=self.K, replace=False)].copy()

    def assign(self, modes: np.ndarray) -> np.ndarray:
        """Nearest mode for every point, then reseed empty clusters"""
        distances = hamming_to_centers(self.codes, modes)
        labels = np.argmin(distances, axis=1)
        sizes = np.bincount(labels, minlength=self.K)
        for k in np.flatnonzero(sizes == 0):
            own = distances[np.arange(self.data.n), labels].astype(float)
            own[sizes[labels] <= 1] = -1.0
            farthest = int(np.argmax(own))
            sizes[labels[farthest]] -= 1
            labels[farthest] = k
            sizes[k] = 1
            modes[k] = self.codes[farthest]
            distances[:, k] = (self.codes != modes[k]).sum(axis=1)
        return labels

    def update_modes(self, labels: np.ndarray) -> np.ndarray:
        """Per-variable majority modality of each cluster"""
        membership = (labels[:, None] == np.arange(self.K)[None, :]).astype(float)
        counts = (membership.T @ self.onehot).reshape(self.K, self.data.p, self.m_max)
        counts = np.where(self.valid[None, :, :], counts, -1.0)
        return np.argmax(counts, axis=2)

    def cost(self, labels: np.ndarray, modes: np.ndarray) -> int:
        return int((self.codes != modes[labels]).sum())

    def fit(self, rng: np.random.Generator, restart_index: int = 0) -> KModesResult:
        """Alternate assignment and mode updates until assignments stabilize"""
        modes = self.init_modes(rng)
        labels = self.assign(modes)
        modes = self.update_modes(labels)
        cost = self.cost(labels, modes)
        history = [cost]
        converged = False
        iterations = 1

        while iterations < self.max_iter:
            new_labels = self.assign(modes)
            if np.array_equal(new_labels, labels):
                converged = True
                break
            labels = new_labels
            modes = self.update_modes(labels)
            new_cost = self.cost(labels, modes)
            if new_cost > cost:
                raise SamplerError(f"K-modes cost increased from {cost} to {new_cost} "
                                   f"(restart {restart_index}, iteration {iterations})")
            cost = new_cost
            history.append(cost)
            iterations += 1

        if not converged:
            logger.warning(f"K-modes restart {restart_index} stopped at max_iter={self.max_iter}")

        # canonical labels and modes in the same order
        partition = Partition(labels + 1)
        _, first = np.unique(labels, return_index=True)
        order = labels[np.sort(first)]
        return KModesResult(partition=partition, modes=modes[order], cost=cost,
                            iterations=iterations, restart_index=restart_index,
                            cost_history=history, converged=converged)


def kmodes_restarts(data: CategoricalDataset, K: int, restarts: int, max_iter: Optional[int],
                    rng: np.random.Generator) -> List[KModesResult]:
    """Every restart, each on its own child stream"""
    if restarts < 1:
        raise DomainError(f"restarts must be >= 1, got {restarts}")
    model = KModes(data, K, max_iter)
    children = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(restarts)
    return [model.fit(np.random.default_rng(child), restart_index=r) for r, child in enumerate(children)]


def best_restart(results: List[KModesResult]) -> KModesResult:
    return min(results, key=lambda r: (r.cost, r.restart_index))


def kmodes(data: CategoricalDataset, K: int, restarts: int, max_iter: Optional[int],
           rng: np.random.Generator) -> KModesResult:
    """Lowest-cost restart (ties to the earliest restart)"""
    results = kmodes_restarts(data, K, restarts, max_iter, rng)
    best = best_restart(results)
    logger.info(f"K-modes K={K}: best cost {best.cost} at restart {best.restart_index} of {restarts}")
    return best


def restart_ari_summary(results: List[KModesResult], truth: Partition) -> dict:
    """ARI of every restart against reference classes"""
    scores = np.array([adjusted_rand_index(r.partition, truth) for r in results])
    best = best_restart(results)
    return {
        "restarts": len(results),
        "mean_ari": float(scores.mean()),
        "sd_ari": float(scores.std(ddof=1)) if scores.size > 1 else 0.0,
        "best_cost_ari": float(scores[best.restart_index]),
        "best_cost": int(best.cost),
    }


def generate_baseline_report(results: List[KModesResult], truth: Optional[Partition] = None) -> str:
    """Human-readable summary of a set of restarts"""
    best = best_restart(results)
    costs = np.array([r.cost for r in results])
    lines = [
        "K-MODES BASELINE",
        f"  K:                 {best.partition.K}",
        f"  Restarts:          {len(results)}",
        f"  Best cost:         {best.cost} (restart {best.restart_index})",
        f"  Median cost:       {np.median(costs):.1f}",
        f"  Converged:         {sum(r.converged for r in results)}/{len(results)}",
    ]
    if truth is not None:
        summary = restart_ari_summary(results, truth)
        lines += [
            f"  Mean ARI:          {summary['mean_ari']:.4f} (sd {summary['sd_ari']:.4f})",
            f"  Best-cost ARI:     {summary['best_cost_ari']:.4f}",
        ]
    return "\n".join(lines)
