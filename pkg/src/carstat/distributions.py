"""Normal and chi-square distribution kernels.

The normal quantile uses Acklam's rational approximation followed by one
Halley step, always refined on the lower tail so that both tails keep full
relative precision. Chi-square probabilities go through the regularized
incomplete gamma function (series below ``a + 1``, Lentz continued fraction
above), and chi-square quantiles are found by safeguarded Newton iteration.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

from .errors import OutOfRangeError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425

_EPS = 1e-15
_FPMIN = 1e-300


def normal_cdf(z):
    """Standard normal distribution function. Accepts scalars or arrays."""
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) / _SQRT2)
    return 0.5 * _sp.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def normal_sf(z):
    """Upper tail ``1 - normal_cdf(z)`` without cancellation."""
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(float(z) / _SQRT2)
    return 0.5 * _sp.erfc(np.asarray(z, dtype=float) / _SQRT2)


def _lower_tail_quantile(q: np.ndarray) -> np.ndarray:
    """Quantile for ``0 < q <= 0.5`` (result is <= 0)."""
    x = np.empty_like(q)
    tail = q < _P_LOW
    if tail.any():
        t = np.sqrt(-2.0 * np.log(q[tail]))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        x[tail] = num / den
    mid = ~tail
    if mid.any():
        r = q[mid] - 0.5
        r2 = r * r
        num = (((((_A[0] * r2 + _A[1]) * r2 + _A[2]) * r2 + _A[3]) * r2 + _A[4]) * r2 + _A[5]) * r
        den = ((((_B[0] * r2 + _B[1]) * r2 + _B[2]) * r2 + _B[3]) * r2 + _B[4]) * r2 + 1.0
        x[mid] = num / den
    # one Halley step against the lower-tail cdf
    e = 0.5 * _sp.erfc(-x / _SQRT2) - q
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on the open interval (0, 1)."""
    scalar = np.ndim(p) == 0
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise OutOfRangeError("normal_quantile needs 0 < p < 1")
    upper = arr > 0.5
    q = np.where(upper, 1.0 - arr, arr)
    x = _lower_tail_quantile(q)
    x = np.where(upper, -x, x)
    x[arr == 0.5] = 0.0
    return float(x[0]) if scalar else x


# -- regularized incomplete gamma ------------------------------------------

def _log_prefactor(a: float, x: float) -> float:
    return -x + a * math.log(x) - math.lgamma(a)


def _gamma_series(a: float, x: float) -> float:
    ap = a
    term = total = 1.0 / a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(_log_prefactor(a, x))


def _gamma_contfrac(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(_log_prefactor(a, x)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise OutOfRangeError("gammainc_lower needs a > 0")
    if x < 0:
        raise OutOfRangeError("gammainc_lower needs x >= 0")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_contfrac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise OutOfRangeError("gammainc_upper needs a > 0")
    if x < 0:
        raise OutOfRangeError("gammainc_upper needs x >= 0")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_contfrac(a, x)


# -- chi-square ------------------------------------------------------------

def _check_df(k) -> int:
    if int(k) != k or k < 1:
        raise OutOfRangeError(f"degrees of freedom must be a positive integer, got {k!r}")
    return int(k)


def chisq_cdf(w: float, k: int) -> float:
    k = _check_df(k)
    if w < 0:
        raise OutOfRangeError("chisq_cdf needs w >= 0")
    return gammainc_lower(0.5 * k, 0.5 * w)


def chisq_sf(w: float, k: int) -> float:
    """Upper-tail probability, used for Wald p-values."""
    k = _check_df(k)
    if w < 0:
        raise OutOfRangeError("chisq_sf needs w >= 0")
    return gammainc_upper(0.5 * k, 0.5 * w)


def _chisq_pdf(w: float, k: int) -> float:
    if w <= 0:
        return 0.0
    a = 0.5 * k
    return math.exp((a - 1.0) * math.log(w) - 0.5 * w - a * math.log(2.0) - math.lgamma(a))


def chisq_quantile(p: float, k: int) -> float:
    k = _check_df(k)
    if not 0.0 < p < 1.0:
        raise OutOfRangeError("chisq_quantile needs 0 < p < 1")
    if k == 1:
        z = normal_quantile(0.5 * (1.0 - p))
        return z * z
    if k == 2:
        return -2.0 * math.log1p(-p)

    # Wilson-Hilferty start
    z = normal_quantile(p)
    h = 2.0 / (9.0 * k)
    w = max(k * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-8)

    upper = p > 0.5
    target = 1.0 - p if upper else p

    def f(v: float) -> float:
        return (target - chisq_sf(v, k)) if upper else (chisq_cdf(v, k) - target)

    lo, hi = 0.0, max(2.0 * w, 1.0)
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        fw = f(w)
        if fw == 0:
            return w
        if fw < 0:
            lo = max(lo, w)
        else:
            hi = min(hi, w)
        dens = _chisq_pdf(w, k)
        step = fw / dens if dens > 0 else math.inf
        nxt = w - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - w) <= 1e-15 * max(1.0, nxt):
            return nxt
        w = nxt
    return w
