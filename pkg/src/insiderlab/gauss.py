"""Standard normal kernels evaluated without cancellation.

Everything here works on scalars or numpy arrays. Tail probabilities go
through ``scipy.special.log_ndtr``, which switches to the asymptotic
Mills-ratio series in the far tails, so ratios of densities to tail masses
stay finite long after the raw values underflow.
"""

import numpy as np
from scipy.special import erf, log_ndtr, ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_SQRT2 = np.sqrt(2.0)


def log_pdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - LOG_SQRT_2PI


def pdf(z):
    return np.exp(log_pdf(z))


def cdf(z):
    return ndtr(np.asarray(z, dtype=float))


def complement_cdf(z):
    """P(Z > z), evaluated as Phi(-z) so it keeps full relative precision for z > 0."""
    return ndtr(-np.asarray(z, dtype=float))


def log_cdf(z):
    return log_ndtr(np.asarray(z, dtype=float))


def log_complement_cdf(z):
    return log_ndtr(-np.asarray(z, dtype=float))


def _log1mexp(a):
    # log(1 - exp(a)) for a <= 0
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(a > -0.6931471805599453, np.log(-np.expm1(a)), np.log1p(-np.exp(a)))


_NARROW = 0.5
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _log_narrow_mass(lo, hi):
    # differencing cdfs loses digits on short intervals; integrate the density instead
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[:, None] + half[:, None] * _GL_X
    rel = log_pdf(u) - log_pdf(mid)[:, None]
    with np.errstate(divide="ignore"):
        return log_pdf(mid) + np.log(half * (np.exp(rel) @ _GL_W))


def log_interval_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo < hi, elementwise.

    Intervals on one side of zero are differenced in whichever tail is
    smaller; intervals straddling zero use erf, whose values then have
    opposite signs and add without cancellation. Intervals shorter than
    0.5 are integrated directly with Gauss-Legendre.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    out = np.empty(lo.shape)
    narrow = (hi - lo) <= _NARROW
    upper = (lo >= 0.0) & ~narrow
    lower = (hi <= 0.0) & ~narrow
    mid = ~(upper | lower | narrow)
    if narrow.any():
        out[narrow] = _log_narrow_mass(lo[narrow], hi[narrow])
    if upper.any():
        a = log_ndtr(-lo[upper])
        b = log_ndtr(-hi[upper])
        out[upper] = a + _log1mexp(b - a)
    if lower.any():
        a = log_ndtr(hi[lower])
        b = log_ndtr(lo[lower])
        out[lower] = a + _log1mexp(b - a)
    if mid.any():
        out[mid] = np.log(0.5 * (erf(hi[mid] / _SQRT2) - erf(lo[mid] / _SQRT2)))
    return out if out.ndim else out[()]


def log_abs_pdf_difference(a, b, a_plus_b=None):
    """Return (sign, log|pdf(a) - pdf(b)|) with the larger density factored out.

    The exponent gap (b^2 - a^2)/2 is formed as (b - a)(b + a)/2 so nearby
    arguments do not cancel. Callers that know ``a + b`` more accurately than
    the rounded sum (a and b nearly opposite) may pass it.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    total = b + a if a_plus_b is None else a_plus_b
    gap = 0.5 * (b - a) * total
    sign = np.sign(gap)
    lead = np.where(gap >= 0.0, log_pdf(a), log_pdf(b))
    with np.errstate(divide="ignore"):
        mag = lead + _log1mexp(-np.abs(gap))
    return sign, mag
