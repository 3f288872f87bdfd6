"""Information drift of B under the initially enlarged filtration.

Three kinds of insider knowledge are supported:

* ``exact``: G = B_T. The drift is the bridge drift (B_T - B_t)/(T - t).
* ``interval``: G = 1{c1 <= B_T <= c2}.
* ``union``: G = 1{B_T in A} with A the union of [2k-1, 2k] over all integers k.

For the indicator kinds, with s = sqrt(T - t) and z_c = (c - x)/s for a
boundary point c, P(G=1 | B_t=x) is the Gaussian mass of A seen from x and

    alpha^1 = sum_c sign_c * pdf(z_c) / (s * P(G=1 | B_t=x)),
    alpha^0 = -sum_c sign_c * pdf(z_c) / (s * P(G=0 | B_t=x)),

where sign_c is +1 at the left end of a piece of A and -1 at its right end.
Both are evaluated in log space so they survive t -> T, where the masses and
densities underflow long before their ratios do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, logsumexp

from insiderlab import csvio
from insiderlab.gauss import log_abs_pdf_difference, log_interval_mass
from insiderlab.market import BrownianPath

KINDS = ("exact", "interval", "union")
# half-width of the union series window in units of sqrt(T - t)
UNION_WINDOW_SD = 9.0
UNION_GUARD = 2
# beyond this |z| at the nearer interval endpoint the drift uses tail ratios
FAR_TAIL_Z = 8.0


@dataclass(frozen=True)
class InsiderInfo:
    kind: str
    T: float = 1.0
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown information kind {self.kind!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.kind == "interval":
            if self.c1 is None or self.c2 is None or not self.c1 < self.c2:
                raise ValueError("interval information needs c1 < c2")
        elif self.c1 is not None or self.c2 is not None:
            raise ValueError(f"{self.kind} information takes no interval bounds")

    @classmethod
    def exact(cls, T=1.0):
        return cls("exact", T)

    @classmethod
    def interval(cls, c1, c2, T=1.0):
        return cls("interval", T, float(c1), float(c2))

    @classmethod
    def union(cls, T=1.0):
        return cls("union", T)

    def indicator(self, b_T):
        """Realized G for terminal values ``b_T`` (indicator kinds only)."""
        b_T = np.asarray(b_T, dtype=float)
        if self.kind == "interval":
            return ((b_T >= self.c1) & (b_T <= self.c2)).astype(int)
        if self.kind == "union":
            m = np.mod(b_T, 2.0)
            return ((m >= 1.0) | (m == 0.0)).astype(int)
        raise ValueError("exact information is not an indicator")

    def prior_mass(self):
        """P(G = 1) at time 0."""
        return float(np.exp(_log_masses(self, np.float64(0.0), 0.0)[1]))


def alpha_exact(b_T, b_t, t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t >= T) or np.any(t < 0):
        raise ValueError("alpha_exact needs 0 <= t < T")
    return (np.asarray(b_T, dtype=float) - np.asarray(b_t, dtype=float)) / (T - t)


def _check_time(info, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= info.T):
        raise ValueError("the drift is defined for 0 <= t < T only")
    return t


def _union_boundaries(x, s):
    # boundaries n = floor(x) + j covering |n - x| <= 9 s plus guard terms
    half = int(math.ceil(UNION_WINDOW_SD * float(np.max(s)))) + UNION_GUARD + 1
    base = np.floor(x)
    offsets = np.arange(-half, half + 2, dtype=float).reshape((-1,) + (1,) * np.ndim(x))
    return base + offsets


def _log_masses(info, x, t):
    """(log P(G=0 | B_t=x), log P(G=1 | B_t=x))."""
    s = np.sqrt(info.T - t)
    if info.kind == "interval":
        z1 = (info.c1 - x) / s
        z2 = (info.c2 - x) / s
        log_in = log_interval_mass(z1, z2)
        log_out = np.logaddexp(log_interval_mass(-np.inf, z1), log_interval_mass(z2, np.inf))
        return log_out, log_in
    n = _union_boundaries(x, s)
    lo = (n[:-1] - x) / s
    hi = (n[1:] - x) / s
    logm = log_interval_mass(lo, hi)
    in_a = np.mod(n[:-1], 2.0) == 1.0  # pieces [2k-1, 2k] start at an odd boundary
    in_a = np.broadcast_to(in_a, logm.shape)
    neg = np.full(logm.shape, -np.inf)
    return logsumexp(np.where(in_a, neg, logm), axis=0), logsumexp(np.where(in_a, logm, neg), axis=0)


def _log_numerator(info, x, t):
    """(sign, log|N|) with N = sum over pieces [a, b] of A of pdf(z_a) - pdf(z_b)."""
    s = np.sqrt(info.T - t)
    if info.kind == "interval":
        return log_abs_pdf_difference((info.c1 - x) / s, (info.c2 - x) / s,
                                      ((info.c1 + info.c2) - 2 * x) / s)
    n = _union_boundaries(x, s)
    odd = np.mod(n, 2.0) == 1.0
    sign, mag = log_abs_pdf_difference((n[:-1] - x) / s, (n[1:] - x) / s, ((n[:-1] + n[1:]) - 2 * x) / s)
    # keep only pieces of A, i.e. those starting at an odd boundary
    mag = np.where(odd[:-1], mag, -np.inf)
    sign = np.where(odd[:-1], sign, 0.0)
    lead = np.max(mag, axis=0)
    safe_lead = np.where(np.isfinite(lead), lead, 0.0)
    total = np.sum(sign * np.exp(mag - safe_lead), axis=0)
    with np.errstate(divide="ignore"):
        return np.sign(total), safe_lead + np.log(np.abs(total))


def log_conditional_mass(info: InsiderInfo, g, x, t):
    if info.kind == "exact":
        raise ValueError("conditional mass is undefined for exact terminal information")
    t = _check_time(info, t)
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), t)
    log0, log1 = _log_masses(info, x, t)
    g = np.asarray(g)
    return np.where(g == 1, log1, log0)


def conditional_mass(info: InsiderInfo, g, x, t):
    """P(G = g | B_t = x)."""
    out = np.exp(log_conditional_mass(info, g, x, t))
    return out if out.ndim else float(out)


def alpha_indicator(info: InsiderInfo, g, x, t):
    """Drift alpha^g(x, t) for the interval and union kinds."""
    if info.kind == "exact":
        raise ValueError("use alpha_exact for exact terminal information")
    t = _check_time(info, t)
    x, t, g = np.broadcast_arrays(np.asarray(x, dtype=float), t, np.asarray(g))
    if np.any((g != 0) & (g != 1)):
        raise ValueError("g must be 0 or 1")
    log0, log1 = _log_masses(info, x, t)
    log_mass = np.where(g == 1, log1, log0)
    if np.any(np.isneginf(log_mass)):
        raise ValueError("conditioning on an outcome with zero conditional mass")
    sign, log_num = _log_numerator(info, x, t)
    sign = np.where(g == 1, sign, -sign)
    out = sign * np.exp(log_num - log_mass - 0.5 * np.log(info.T - t))
    out = np.where(sign == 0, 0.0, out)
    if info.kind == "interval":
        out = _interval_far_tail(info, x, t, g, out)
    return out if out.ndim else float(out)


def _mills(z):
    # Phi(z) / pdf(z) for z <= 0, finite however negative z is
    return math.sqrt(math.pi / 2) * erfcx(-z / math.sqrt(2))


def _interval_far_tail(info, x, t, g, out):
    """Replace entries whose conditioning event is a far Gaussian tail.

    There the log masses are huge and their difference loses digits, so
    numerator and mass are both divided by pdf at the nearer endpoint and
    the masses written with scaled Mills ratios.
    """
    s = np.sqrt(info.T - t)
    z1, z2 = (info.c1 - x) / s, (info.c2 - x) / s
    below, above = z1 > 0, z2 < 0
    inside = ~(below | above)
    near = np.where(below | (inside & (-z1 > z2)), z1, z2)
    far = np.where(near == z1, z2, z1)
    use = (np.abs(near) > FAR_TAIL_Z) & (np.abs(far) - np.abs(near) >= 0.5)
    use &= np.where(inside, g == 0, g == 1)
    if not np.any(use):
        return out
    z1, z2, near, s = z1[use], z2[use], near[use], np.broadcast_to(s, use.shape)[use]
    e1 = np.exp(-0.5 * (z1 - near) * (z1 + near))
    e2 = np.exp(-0.5 * (z2 - near) * (z2 + near))
    num = e1 - e2
    b, a, i = below[use], above[use], inside[use]
    den = np.empty(num.shape)
    den[a] = _mills(z2[a]) * e2[a] - _mills(z1[a]) * e1[a]
    den[b] = _mills(-z1[b]) * e1[b] - _mills(-z2[b]) * e2[b]
    den[i] = _mills(z1[i]) * e1[i] + _mills(-z2[i]) * e2[i]
    sign = np.where(i, -1.0, 1.0)
    out = np.array(out, dtype=float, copy=True)
    out[use] = sign * num / (den * s)
    return out


def mixture_residual(info: InsiderInfo, x, t):
    """alpha^1 P(1|x) + alpha^0 P(0|x), zero in exact arithmetic."""
    m1 = conditional_mass(info, 1, x, t)
    m0 = conditional_mass(info, 0, x, t)
    return alpha_indicator(info, 1, x, t) * m1 + alpha_indicator(info, 0, x, t) * m0


def alpha_matrix(info: InsiderInfo, realized, b, nodes):
    """Drift along an ensemble of paths.

    ``b`` has one row per path on ``nodes``; ``realized`` holds B_T (exact
    kind) or G per path. Columns at t >= T are dropped.
    """
    nodes = np.asarray(nodes, dtype=float)
    b = np.atleast_2d(b)
    keep = nodes < info.T
    out = np.empty((b.shape[0], int(keep.sum())))
    realized = np.asarray(realized)
    for j in np.flatnonzero(keep):
        t = nodes[j]
        if info.kind == "exact":
            out[:, j] = (realized - b[:, j]) / (info.T - t)
        else:
            out[:, j] = alpha_indicator(info, realized, b[:, j], t)
    return out


def alpha_on_path(info: InsiderInfo, realized_g, bpath: BrownianPath):
    """alpha^G at every node of ``bpath`` strictly before T."""
    nodes = bpath.grid.nodes
    pinned = nodes[-1] == info.T
    if info.kind == "exact":
        if pinned and not math.isclose(bpath.values[-1], realized_g, rel_tol=0, abs_tol=1e-12):
            raise ValueError("path terminal value contradicts the realized B_T")
    else:
        if realized_g not in (0, 1):
            raise ValueError("indicator information must be realized as 0 or 1")
        if pinned and int(info.indicator(bpath.values[-1])) != realized_g:
            raise ValueError("path terminal value contradicts the realized indicator")
    return alpha_matrix(info, realized_g, bpath.values[None, :], nodes)[0]


def write_drift_surface(target, info: InsiderInfo, xs, ts):
    rows = []
    for t in ts:
        for g in (0, 1):
            a = alpha_indicator(info, g, np.asarray(xs, dtype=float), t)
            m = conditional_mass(info, g, np.asarray(xs, dtype=float), t)
            rows.extend((t, x, g, ai, mi) for x, ai, mi in zip(xs, np.atleast_1d(a), np.atleast_1d(m)))
    csvio.write_csv(target, ["t", "x", "g", "alpha", "mass"], rows)
