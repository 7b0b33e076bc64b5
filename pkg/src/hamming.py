"""
The Hamming distribution on categorical vectors.

p(x | c, sigma) = prod_j exp(-[x_j != c_j] / sigma_j) / (1 + (m_j - 1) exp(-1/sigma_j))
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np

from config import numerics_config
from models import DataValidationError, DomainError, HammingParams, ScaleDirection

logger = logging.getLogger(__name__)


def clamp_scale(scale: np.ndarray) -> np.ndarray:
    """Floor sampled scales at the configured minimum"""
    return np.maximum(scale, numerics_config.SIGMA_FLOOR)


def log_normalizer(scale: np.ndarray, modality_counts: np.ndarray) -> np.ndarray:
    """ln(1 + (m - 1) exp(-1/sigma)) elementwise"""
    return np.log1p((np.asarray(modality_counts) - 1) * np.exp(-1.0 / np.asarray(scale)))


def _check_codes(x: np.ndarray, modality_counts: np.ndarray) -> None:
    if x.shape[-1] != modality_counts.shape[0]:
        raise DataValidationError(f"vector length {x.shape[-1]} != p={modality_counts.shape[0]}")
    if np.any((x < 0) | (x >= modality_counts)):
        raise DataValidationError("code outside its alphabet")


def log_pmf(x: Sequence[int], params: HammingParams, modality_counts: Sequence[int]) -> float:
    """ln p(x | c, sigma)"""
    x = np.asarray(x, dtype=np.int64)
    m = np.asarray(modality_counts, dtype=np.int64)
    _check_codes(x, m)
    if params.p != m.shape[0]:
        raise DataValidationError("params and modality counts disagree on p")
    mismatch = (x != params.center).astype(float)
    return float(np.sum(-mismatch / params.scale - log_normalizer(params.scale, m)))


def log_pmf_shared(x: Sequence[int], center: Sequence[int], sigma: float,
                   modality_counts: Sequence[int]) -> float:
    """ln p(x | c, sigma) when one sigma is common to every variable

    Depends on x only through the Hamming distance d(x, c).
    """
    x = np.asarray(x, dtype=np.int64)
    m = np.asarray(modality_counts, dtype=np.int64)
    _check_codes(x, m)
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    distance = np.count_nonzero(x != np.asarray(center))
    return float(-distance / sigma - log_normalizer(np.full(m.shape, sigma), m).sum())


def log_pmf_matrix(codes: np.ndarray, centers: np.ndarray, scales: np.ndarray,
                   modality_counts: np.ndarray) -> np.ndarray:
    """n x L matrix of ln p(x_i | c_l, sigma_l)"""
    inv_scale = 1.0 / scales
    mismatch = codes[:, None, :] != centers[None, :, :]
    log_norm = log_normalizer(scales, modality_counts[None, :]).sum(axis=1)
    penalty = np.einsum("nlp,lp->nl", mismatch, inv_scale, optimize=True)
    return -penalty - log_norm[None, :]


def modal_probabilities(scale: Union[float, np.ndarray], modality_counts) -> tuple:
    """(probability of the center, probability of each other modality)"""
    omega = np.exp(-1.0 / np.asarray(scale, dtype=float))
    denom = 1.0 + (np.asarray(modality_counts) - 1) * omega
    return 1.0 / denom, omega / denom


def sample_rows(centers: np.ndarray, scales: np.ndarray, modality_counts: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """One draw per row of (centers, scales); each variable independently keeps
    the center or moves uniformly to one of the other m_j - 1 modalities"""
    m = np.asarray(modality_counts, dtype=np.int64)[None, :]
    p_center, _ = modal_probabilities(scales, m)
    keep = rng.random(centers.shape) < p_center
    # Uniform over the non-center codes: shift past the center
    offset = np.floor(rng.random(centers.shape) * np.maximum(m - 1, 1)).astype(np.int64)
    other = (centers + 1 + offset) % m
    return np.where(keep | (m == 1), centers, other)


def sample(params: HammingParams, modality_counts: Sequence[int], rng: np.random.Generator,
           size: Optional[int] = None) -> np.ndarray:
    """Draw code vectors from Hamming(c, sigma)"""
    n_draws = 1 if size is None else int(size)
    centers = np.broadcast_to(params.center, (n_draws, params.p))
    scales = np.broadcast_to(params.scale, (n_draws, params.p))
    draws = sample_rows(centers, scales, np.asarray(modality_counts), rng)
    return draws[0] if size is None else draws


def _validate_heterogeneity_inputs(scales, modality_counts):
    scales = np.asarray(scales, dtype=float)
    m = np.asarray(modality_counts, dtype=np.int64)
    if scales.shape != m.shape:
        raise DomainError("scales and modality counts must have equal length")
    if np.any(~(scales > 0)):
        raise DomainError("scales must be strictly positive")
    if np.all(m == 1):
        raise DomainError("heterogeneity is undefined when every variable has m = 1")
    return scales, m


def gini_normalized(scales: Sequence[float], modality_counts: Sequence[int]) -> float:
    """Gini heterogeneity of the Hamming distribution divided by its maximum"""
    scales, m = _validate_heterogeneity_inputs(scales, modality_counts)
    omega = np.exp(-1.0 / scales)
    # (e^{2/s} + m - 1) / (e^{1/s} + m - 1)^2 rewritten in omega
    concentration = (1.0 + (m - 1) * omega ** 2) / (1.0 + (m - 1) * omega) ** 2
    gini = 1.0 - np.prod(concentration)
    gini_max = 1.0 - np.prod(1.0 / m)
    return float(np.clip(gini / gini_max, 0.0, 1.0))


def shannon_normalized(scales: Sequence[float], modality_counts: Sequence[int]) -> float:
    """Shannon entropy of the Hamming distribution divided by its maximum"""
    scales, m = _validate_heterogeneity_inputs(scales, modality_counts)
    omega = np.exp(-1.0 / scales)
    spread = (m - 1) * omega
    entropy = np.log1p(spread) + spread / (scales * (1.0 + spread))
    return float(np.clip(entropy.sum() / np.log(m).sum(), 0.0, 1.0))


def sigma_to_epsilon(sigma, m):
    """Latent-class scatter: total probability of leaving the modal category"""
    sigma = np.asarray(sigma, dtype=float)
    spread = (np.asarray(m) - 1) * np.exp(-1.0 / sigma)
    return spread / (1.0 + spread)


def epsilon_to_sigma(epsilon, m):
    """Inverse of sigma_to_epsilon on (0, (m-1)/m)"""
    epsilon = np.asarray(epsilon, dtype=float)
    m = np.asarray(m)
    with np.errstate(divide="ignore"):
        return 1.0 / np.log((m - 1) * (1.0 - epsilon) / epsilon)


def sigma_epsilon_convert(value: float, m: int, direction: ScaleDirection) -> float:
    """Map between a Hamming scale and the equivalent latent-class scatter"""
    direction = ScaleDirection(direction)
    if m < 2:
        raise DomainError(f"conversion needs m >= 2, got {m}")
    if direction is ScaleDirection.SIGMA_TO_EPSILON:
        if not value > 0:
            raise DomainError(f"sigma must be positive, got {value}")
        return float(sigma_to_epsilon(value, m))
    upper = (m - 1) / m
    if not 0.0 < value < upper:
        raise DomainError(f"epsilon must lie in (0, {upper}), got {value}")
    return float(epsilon_to_sigma(value, m))
