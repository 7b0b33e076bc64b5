"""
Special functions and quadrature shared by the statistical modules.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from config import numerics_config
from models import ConvergenceError, DomainError, QuadratureError, SignedLogValue

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_LOG_RESCALE = 200.0 * math.log(10.0)

# Gauss-Kronrod 7/15 abscissae and weights (QUADPACK dqk15); the Gauss
# nodes are the odd-indexed Kronrod nodes.
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

# Full symmetric rule on [-1, 1]
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_LOG_KRONROD_W = np.log(np.concatenate([_WGK[:-1], _WGK[::-1]]))
_GAUSS_IDX = np.array([1, 3, 5, 7, 9, 11, 13])
_LOG_GAUSS_W = np.log(np.concatenate([_WG[:-1], _WG[::-1]]))


# ---------------------------------------------------------------------------
# Gauss hypergeometric function with first parameter one
# ---------------------------------------------------------------------------

def _log_series_1bc(b: float, c: float, z: float, rtol: float, max_terms: int) -> float:
    """ln 2F1(1, b; c; z) by ratio recursion; every term is positive"""
    term = 1.0
    total = 1.0
    log_scale = 0.0
    for k in range(max_terms):
        term *= (b + k) / (c + k) * z
        total += term
        if total > 1e200:
            total *= 1e-200
            term *= 1e-200
            log_scale += _LOG_RESCALE
        # Ratios are monotone in k and tend to z, so R bounds the rest
        ratio_bound = max((b + k + 1) / (c + k + 1) * z, z)
        if ratio_bound < 1.0 and term * ratio_bound / (1.0 - ratio_bound) <= 0.1 * rtol * total:
            return math.log(total) + log_scale
    raise ConvergenceError(
        f"2F1(1, {b}; {c}; {z}) series did not converge",
        partial=math.exp(min(math.log(total) + log_scale, 700.0)),
        iterations=max_terms,
    )


def _series_general(a: float, b: float, c: float, z: float, rtol: float,
                    max_terms: int) -> Tuple[float, float]:
    """2F1(a, b; c; z) summed term by term; returns (value, sum of |terms|)"""
    term = 1.0
    total = 1.0
    absolute = 1.0
    settle = max(abs(a), abs(b)) + 1.0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        absolute += abs(term)
        if term == 0.0:
            return total, absolute
        if k > settle and abs(term) <= 0.01 * rtol * abs(total):
            return total, absolute
    raise ConvergenceError(f"2F1({a}, {b}; {c}; {z}) series did not converge",
                           partial=total, iterations=max_terms)


def log_gauss_2f1_1bc(b: float, c: float, z: float, rtol: Optional[float] = None,
                      max_terms: Optional[int] = None) -> float:
    """ln 2F1(1, b; c; z) for b, c > 0 and 0 <= z < 1"""
    rtol = rtol or numerics_config.HYP2F1_RTOL
    max_terms = max_terms or numerics_config.HYP2F1_MAX_TERMS
    if not (b > 0 and c > 0):
        raise DomainError(f"2F1 requires b > 0 and c > 0, got b={b}, c={c}")
    if not 0.0 <= z < 1.0:
        raise DomainError(f"2F1 requires 0 <= z < 1, got z={z}")
    if z == 0.0:
        return 0.0

    if z > numerics_config.HYP2F1_EULER_THRESHOLD and b > c - 1.0:
        # Euler: 2F1(1,b;c;z) = (1-z)^(c-1-b) 2F1(c-1, c-b; c; z)
        value, absolute = _series_general(c - 1.0, c - b, c, z, rtol, max_terms)
        if value > 0 and absolute <= 1e3 * value:
            return (c - 1.0 - b) * math.log1p(-z) + math.log(value)
        logger.debug(f"Euler transform cancels for b={b}, c={c}, z={z}; summing directly")

    return _log_series_1bc(b, c, z, rtol, max_terms)


def gauss_2f1_1bc(b: float, c: float, z: float, rtol: Optional[float] = None,
                  max_terms: Optional[int] = None) -> float:
    """2F1(1, b; c; z) to relative tolerance rtol"""
    return float(np.exp(log_gauss_2f1_1bc(b, c, z, rtol, max_terms)))


# ---------------------------------------------------------------------------
# Gamma function and generalized factorial coefficients
# ---------------------------------------------------------------------------

def log_gamma(x: ArrayLike) -> ArrayLike:
    """ln Gamma(x) for x > 0"""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    result = special.gammaln(arr)
    return float(result) if np.ndim(result) == 0 else result


@lru_cache(maxsize=64)
def log_gen_factorial_row(n: int, gamma: float) -> np.ndarray:
    """ln D(n, K) for K = 0..n

    D(n, K) = (-1)^n C(n, K; -gamma) obeys the sign-free recursion
    D(n, K) = gamma D(n-1, K-1) + (K gamma + n - 1) D(n-1, K)
    with D(0, 0) = 1, D(n, 0) = 0 for n >= 1 and D(n, K) = 0 for K > n.
    """
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    log_gamma_value = math.log(gamma)
    row = np.array([0.0])
    for i in range(1, n + 1):
        k = np.arange(1, i + 1)
        left = log_gamma_value + row[:i]
        right = np.full(i, -np.inf)
        right[:i - 1] = np.log(k[:i - 1] * gamma + i - 1) + row[1:i]
        new_row = np.full(i + 1, -np.inf)
        new_row[1:] = np.logaddexp(left, right)
        row = new_row
    row.setflags(write=False)
    return row


def gen_factorial_coeff_signed(n: int, K: int, gamma: float) -> SignedLogValue:
    """D(n, K) = (-1)^n C(n, K; -gamma) as a signed log value (never negative)"""
    if K < 0:
        raise DomainError(f"K must be nonnegative, got {K}")
    if K > n:
        return SignedLogValue.zero()
    return SignedLogValue.from_log(float(log_gen_factorial_row(int(n), float(gamma))[K]))


# ---------------------------------------------------------------------------
# Log-space adaptive quadrature
# ---------------------------------------------------------------------------

def _gk_panels(log_f: Callable[[np.ndarray], np.ndarray], lo: np.ndarray,
               hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Kronrod log-integral and relative error estimate of each panel"""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    values = log_f(x)
    log_half = np.log(half)[:, None]
    log_k = special.logsumexp(log_half + _LOG_KRONROD_W + values, axis=1)
    log_g = special.logsumexp(log_half + _LOG_GAUSS_W + values[:, _GAUSS_IDX], axis=1)
    with np.errstate(invalid="ignore"):
        rel_err = np.abs(np.expm1(log_g - log_k))
    rel_err = np.where(np.isneginf(log_k), 0.0, rel_err)
    return log_k, rel_err


def log_quad_gk(log_f: Callable[[np.ndarray], np.ndarray], breakpoints: Sequence[float],
                tol: Optional[float] = None, max_intervals: Optional[int] = None) -> Tuple[float, float]:
    """ln of the integral of exp(log_f) over [breakpoints[0], breakpoints[-1]]

    Panels are combined with log-sum-exp so integrands far below the
    floating-point range are handled. Returns (log value, achieved absolute
    log tolerance).
    """
    tol = tol or numerics_config.QUAD_LOG_TOL
    max_intervals = max_intervals or numerics_config.QUAD_MAX_INTERVALS
    edges = np.unique(np.asarray(breakpoints, dtype=float))
    lo, hi = edges[:-1], edges[1:]
    log_k, rel_err = _gk_panels(log_f, lo, hi)

    while True:
        total = special.logsumexp(log_k)
        if not np.isfinite(total):
            raise QuadratureError("integrand has no mass on the interval", achieved=np.inf)
        contribution = rel_err * np.exp(log_k - total)
        achieved = float(contribution.sum())
        if achieved <= tol:
            return float(total), achieved
        if lo.shape[0] >= max_intervals:
            raise QuadratureError("interval limit reached", achieved=achieved)

        split = contribution > tol / (4.0 * lo.shape[0])
        split[np.argmax(contribution)] = True
        mids = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mids])
        new_hi = np.concatenate([mids, hi[split]])
        new_k, new_err = _gk_panels(log_f, new_lo, new_hi)

        keep = ~split
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        log_k = np.concatenate([log_k[keep], new_k])
        rel_err = np.concatenate([rel_err[keep], new_err])


def v_integral_log(n: int, K: int, gamma: float, lambda_: float) -> float:
    """ln V(n, K), the partition-size-free factor of the eppf

    With t = 1/(1+u) the integrand becomes
    (1-t)^(n-1) t^(gamma K - 1) (lambda t^gamma + K) exp(-lambda (1 - t^gamma)) / Gamma(n)
    on (0, 1). For gamma K < 1 the further substitution t = s^(1/(gamma K))
    removes the endpoint singularity.
    """
    if n < 1 or not 1 <= K <= n:
        raise DomainError(f"v_integral_log requires n >= 1 and 1 <= K <= n, got n={n}, K={K}")
    if not (gamma > 0 and lambda_ > 0):
        raise DomainError(f"gamma and lambda must be positive, got {gamma}, {lambda_}")

    a = gamma * K
    log_gamma_n = special.gammaln(n)
    depth = int(math.ceil(math.log2(max(n, 2)))) + 4
    breakpoints = [0.0] + [2.0 ** -k for k in range(depth, -1, -1)]

    if a < 1.0:
        inv_a = 1.0 / a
        inv_k = 1.0 / K

        def log_f(s):
            t_gamma = s ** inv_k
            return ((n - 1) * np.log1p(-(s ** inv_a)) + np.log(lambda_ * t_gamma + K)
                    - lambda_ * (1.0 - t_gamma) - math.log(a) - log_gamma_n)
    else:
        def log_f(t):
            t_gamma = t ** gamma
            return ((n - 1) * np.log1p(-t) + (a - 1.0) * np.log(t)
                    + np.log(lambda_ * t_gamma + K) - lambda_ * (1.0 - t_gamma) - log_gamma_n)

    with np.errstate(divide="ignore"):
        log_integral, achieved = log_quad_gk(log_f, breakpoints)
    logger.debug(f"V({n},{K}) quadrature achieved {achieved:.2e}")
    return (K - 1) * math.log(lambda_) + log_integral


# ---------------------------------------------------------------------------
# Random draws
# ---------------------------------------------------------------------------

def shifted_poisson_sample(shift: int, lambda_: float, rng: np.random.Generator,
                           size: Optional[int] = None):
    """Draw from the Poisson(lambda) law translated to {shift, shift+1, ...}"""
    if shift not in (0, 1):
        raise DomainError(f"shift must be 0 or 1, got {shift}")
    if not lambda_ > 0:
        raise DomainError(f"lambda must be positive, got {lambda_}")
    draw = rng.poisson(lambda_, size=size)
    if size is None:
        return int(shift + draw)
    return shift + draw


def categorical_from_log_weights(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row from unnormalized log weights (-inf = excluded)

    Uses the max-subtracted softmax and the inverse CDF of a single uniform per row.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    shifted = log_weights - log_weights.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    cdf = np.cumsum(weights, axis=-1)
    u = rng.random(cdf.shape[:-1]) * cdf[..., -1]
    index = (cdf <= u[..., None]).sum(axis=-1)
    k = weights.shape[-1]
    last_positive = k - 1 - np.argmax(weights[..., ::-1] > 0, axis=-1)
    return np.minimum(index, last_positive)


def spawn_generator(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream keyed by (seed, *keys)"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))
