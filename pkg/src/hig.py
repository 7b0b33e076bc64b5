"""
Hypergeometric inverse gamma (HIG) prior for Hamming scales.

With omega = exp(-1/sigma) the prior density is proportional to
(1 + (m-1) omega)^-(v+w) omega^w on (0, 1). Under the latent-class scatter
eps = (m-1) omega / (1 + (m-1) omega) it becomes a Beta(w+1, v-1) density
truncated to (0, (m-1)/m), which gives an exact incomplete-beta CDF and an
exact inverse-CDF sampler whenever v > 1.

The closed-form CDF implemented here is
F(x) = x^(w+1) (1 + (m-1) x)^-(v+w) 2F1(1, v+w; w+2; (m-1)x / (1+(m-1)x)) / ((w+1) I(v, w)).
Written with (1 + (1-m) x) instead, it agrees with quadrature only at x = 0.
"""

import logging
import math
from functools import lru_cache
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special

from config import numerics_config
from hamming import clamp_scale, gini_normalized
from models import CdfMethod, ConvergenceError, DomainError, HIGParams, default_hig_params
from numerics import log_gauss_2f1_1bc

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Normalizing constant and densities
# ---------------------------------------------------------------------------

@lru_cache(maxsize=65536)
def _norm_const_log(v: float, w: float, m: int) -> float:
    if m == 1:
        return -math.log(w + 1.0)
    z = (m - 1) / m
    return -(v + w) * math.log(m) - math.log(w + 1.0) + log_gauss_2f1_1bc(v + w, w + 2.0, z)


def norm_const_log(params: HIGParams) -> float:
    """ln I(v, w) = ln of the integral over (0, 1) of (1 + (m-1) omega)^-(v+w) omega^w"""
    return _norm_const_log(float(params.v), float(params.w), int(params.m))


def log_density_omega(omega: Union[float, np.ndarray], params: HIGParams):
    """ln f(omega | v, w) on (0, 1)"""
    omega = np.asarray(omega, dtype=float)
    if np.any((omega <= 0) | (omega >= 1)):
        raise DomainError("omega must lie in (0, 1)")
    v, w, m = params.key
    value = w * np.log(omega) - (v + w) * np.log1p((m - 1) * omega) - norm_const_log(params)
    return float(value) if value.ndim == 0 else value


def log_density_sigma(sigma: Union[float, np.ndarray], params: HIGParams):
    """ln f(sigma | v, w)"""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError(f"sigma must be positive, got {sigma}")
    v, w, m = params.key
    value = (-norm_const_log(params) - (v + w) * np.log1p((m - 1) * np.exp(-1.0 / sigma))
             - (w + 1.0) / sigma - 2.0 * np.log(sigma))
    return float(value) if value.ndim == 0 else value


# ---------------------------------------------------------------------------
# Cumulative distribution
# ---------------------------------------------------------------------------

def _cdf_quadrature(x: float, params: HIGParams) -> float:
    v, w, m = params.key
    # y = omega^(w+1) makes the integrand bounded and smooth at 0
    power = 1.0 / (w + 1.0)

    def integrand(y):
        return (1.0 + (m - 1) * y ** power) ** -(v + w)

    upper = x ** (w + 1.0)
    value, _ = integrate.quad(integrand, 0.0, upper, epsabs=0.0, epsrel=1e-12, limit=200)
    if value <= 0.0:
        return 0.0
    return math.exp(math.log(value) - math.log(w + 1.0) - norm_const_log(params))


def _cdf_beta(x: float, params: HIGParams) -> float:
    v, w, m = params.key
    eps = (m - 1) * x / (1.0 + (m - 1) * x)
    upper = (m - 1) / m
    return float(special.betainc(w + 1.0, v - 1.0, eps) / special.betainc(w + 1.0, v - 1.0, upper))


def _cdf_hypergeometric(x: float, params: HIGParams) -> float:
    v, w, m = params.key
    z = (m - 1) * x / (1.0 + (m - 1) * x)
    log_value = ((w + 1.0) * math.log(x) - (v + w) * math.log1p((m - 1) * x)
                 + log_gauss_2f1_1bc(v + w, w + 2.0, z) - math.log(w + 1.0) - norm_const_log(params))
    return math.exp(log_value)


def omega_cdf(omega_tilde: float, params: HIGParams,
              method: Union[CdfMethod, str] = CdfMethod.QUADRATURE) -> float:
    """P(omega <= omega_tilde) under HIG(v, w)"""
    method = CdfMethod(method)
    if not 0.0 <= omega_tilde <= 1.0:
        raise DomainError(f"omega_tilde must lie in [0, 1], got {omega_tilde}")
    if omega_tilde == 0.0:
        return 0.0
    if omega_tilde == 1.0:
        return 1.0
    if params.m == 1:
        return omega_tilde ** (params.w + 1.0)

    if method is CdfMethod.BETA and params.v <= 1.0:
        logger.debug(f"Beta form needs v > 1 (v={params.v}); using quadrature")
        method = CdfMethod.QUADRATURE

    if method is CdfMethod.QUADRATURE:
        value = _cdf_quadrature(omega_tilde, params)
    elif method is CdfMethod.BETA:
        value = _cdf_beta(omega_tilde, params)
    else:
        value = _cdf_hypergeometric(omega_tilde, params)
    return float(min(max(value, 0.0), 1.0))


def epsilon_cdf(epsilon: float, params: HIGParams, method: Union[CdfMethod, str] = CdfMethod.QUADRATURE) -> float:
    """P(scatter <= epsilon) for the latent-class scatter implied by HIG(v, w)"""
    m = params.m
    upper = (m - 1) / m
    if m < 2 or not 0.0 <= epsilon <= upper:
        raise DomainError(f"epsilon must lie in [0, {upper}] for m={m}")
    if epsilon >= upper:
        return 1.0
    omega = epsilon / ((m - 1) * (1.0 - epsilon))
    return omega_cdf(min(omega, 1.0), params, method)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _omega_to_sigma(log_omega: np.ndarray) -> np.ndarray:
    log_omega = np.minimum(log_omega, -1e-15)
    with np.errstate(divide="ignore"):
        return clamp_scale(-1.0 / log_omega)


def _invert_by_root(u: float, params: HIGParams) -> float:
    """omega with omega_cdf(omega) = u by bracketed root-finding"""
    lo, hi = numerics_config.ROOT_BRACKET
    f_lo = omega_cdf(lo, params) - u
    if f_lo >= 0:
        return lo
    f_hi = omega_cdf(hi, params) - u
    if f_hi <= 0:
        return hi
    try:
        root, result = optimize.brentq(lambda x: omega_cdf(x, params) - u, lo, hi,
                                       xtol=numerics_config.ROOT_XTOL, full_output=True,
                                       disp=False)
    except (RuntimeError, ValueError) as e:
        raise ConvergenceError(f"HIG inversion failed for u={u}: {e}") from e
    if not result.converged:
        raise ConvergenceError(f"HIG inversion did not converge for u={u}",
                               partial=root, iterations=result.iterations)
    return root


def sample_sigma(params: HIGParams, rng: np.random.Generator) -> float:
    """One sigma draw by inversion of the quadrature CDF"""
    u = rng.random()
    omega = _invert_by_root(u, params)
    return float(_omega_to_sigma(np.log(omega)))


def sample_sigma_batch(v: np.ndarray, w: np.ndarray, m: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Vectorized sigma draws from HIG(v, w) tied to modality counts m

    Exact truncated-Beta inversion when v > 1 and m > 1; other entries
    fall back to root-finding on the quadrature CDF.
    """
    v, w, m = np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(w, dtype=float),
                                  np.asarray(m, dtype=np.int64))
    shape = v.shape
    v, w, m = v.ravel(), w.ravel(), m.ravel()
    u = rng.random(v.shape[0])
    log_omega = np.empty(v.shape[0])

    single = m == 1
    if single.any():
        # density proportional to omega^w on (0, 1)
        log_omega[single] = np.log(u[single]) / (w[single] + 1.0)

    beta = (~single) & (v > 1.0)
    if beta.any():
        a, b, mm = w[beta] + 1.0, v[beta] - 1.0, m[beta]
        upper = (mm - 1.0) / mm
        target = u[beta] * special.betainc(a, b, upper)
        eps = special.betaincinv(a, b, target)
        eps = np.clip(eps, 1e-300, upper)
        log_omega[beta] = np.log(eps) - np.log(mm - 1.0) - np.log1p(-eps)

    rest = np.flatnonzero(~single & ~beta)
    for idx in rest:
        params = HIGParams(v=float(v[idx]), w=float(w[idx]), m=int(m[idx]))
        log_omega[idx] = math.log(_invert_by_root(float(u[idx]), params))

    return _omega_to_sigma(log_omega).reshape(shape)


# ---------------------------------------------------------------------------
# Posterior updates and summaries
# ---------------------------------------------------------------------------

def posterior_params(params: HIGParams, n: int, match_count: int) -> HIGParams:
    """Full-conditional hyperparameters after n observations with match_count center matches"""
    if n < 0 or not 0 <= match_count <= n:
        raise DomainError(f"match_count must lie in 0..n, got {match_count} with n={n}")
    return HIGParams(v=params.v + match_count, w=params.w + n - match_count, m=params.m)


def omega_mean_and_mode(params: HIGParams) -> Tuple[float, float]:
    """Mean and mode of omega under HIG(v, w)"""
    v, w, m = params.key
    # E[omega] = I(v - 1, w + 1) / I(v, w)
    mean = math.exp(_norm_const_log(v - 1.0, w + 1.0, m) - _norm_const_log(v, w, m))
    mode = w / (v * (m - 1)) if m > 1 and w < v * (m - 1) else 1.0
    return mean, mode


def posterior_omega_mode(params: HIGParams, n: int, match_count: int) -> float:
    """Full-conditional mode of omega as the weighted average of the prior
    mode w/(v(m-1)) and the data mode (n-s)/(s(m-1)) with weights v/(v+s) and s/(v+s)"""
    if n < 0 or not 0 <= match_count <= n:
        raise DomainError(f"match_count must lie in 0..n, got {match_count} with n={n}")
    v, w, m = params.key
    if m == 1:
        return 1.0
    s = match_count
    prior_mode = w / (v * (m - 1))
    data_term = (n - s) / (m - 1)
    mode = (v * prior_mode + data_term) / (v + s)
    return float(min(mode, 1.0))


def marginal_loglik_column(column: Sequence[int], center: int, params: HIGParams) -> float:
    """ln of the column likelihood with sigma integrated out, given the center"""
    column = np.asarray(column, dtype=np.int64)
    if column.size and np.any((column < 0) | (column >= params.m)):
        raise DomainError("column codes outside the alphabet")
    n = int(column.size)
    if n == 0:
        return 0.0
    matches = int(np.count_nonzero(column == center))
    updated = posterior_params(params, n, matches)
    return norm_const_log(updated) - norm_const_log(params)


def marginal_loglik_dataset(codes: np.ndarray, params_list: Sequence[HIGParams]) -> float:
    """ln marginal likelihood of a single Hamming component, with the
    center integrated under its uniform prior and sigma under HIG"""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[1] != len(params_list):
        raise DomainError("one HIG prior per column is required")
    total = 0.0
    for j, params in enumerate(params_list):
        per_center = [marginal_loglik_column(codes[:, j], c, params) for c in range(params.m)]
        total += float(special.logsumexp(per_center) - math.log(params.m))
    return total


def gini_prior_montecarlo(params_list: Sequence[HIGParams], draws: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Prior sample of the normalized Gini index implied by per-variable HIG priors"""
    if draws < 1:
        raise DomainError(f"draws must be >= 1, got {draws}")
    v = np.array([p.v for p in params_list])
    w = np.array([p.w for p in params_list])
    m = np.array([p.m for p in params_list])
    sigmas = sample_sigma_batch(np.tile(v, (draws, 1)), np.tile(w, (draws, 1)),
                                np.tile(m, (draws, 1)), rng)
    return np.array([gini_normalized(row, m) for row in sigmas])


def default_params_list(modality_counts: Sequence[int]) -> List[HIGParams]:
    """Default HIG priors for a list of modality counts"""
    return [default_hig_params(int(m)) for m in modality_counts]
