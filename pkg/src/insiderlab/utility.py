"""Utilities, closed-form and quadrature values, Monte Carlo estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from insiderlab import drift
from insiderlab.drift import InsiderInfo, _log_masses, _log_numerator
from insiderlab.ensemble import iter_paths
from insiderlab.gauss import LOG_SQRT_2PI
from insiderlab.market import MarketParams, make_grid
from insiderlab.strategies import insider_fraction, log_wealth_increments, merton_fraction

MIN_MC_PATHS = 100
# integrand of E[alpha_t^2] is negligible this many sqrt(T-t) away from a boundary
_BOUNDARY_REACH = 12.0
_GAUSS_REACH = 12.0


@dataclass(frozen=True)
class UtilitySpec:
    gamma: float = 0.0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class Estimate:
    """A computed value; ``std_error`` is set for Monte Carlo estimates only.

    Quantities shown to be infinite carry ``divergence="diverging"``, an
    infinite ``value`` and the truncated sequence in ``trend``.
    """

    value: float
    std_error: float | None = None
    n: int = 0
    divergence: str = "finite"
    trend: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.divergence not in ("finite", "diverging", "inconclusive"):
            raise ValueError(f"bad divergence flag {self.divergence!r}")
        if self.divergence == "diverging" and self.trend is None:
            raise ValueError("a diverging estimate needs its truncation trend")

    def within(self, target, n_se=3.0):
        return abs(self.value - target) <= n_se * self.std_error

    def interval99(self):
        half = 2.5758293035489004 * self.std_error
        return self.value - half, self.value + half


def utility(spec: UtilitySpec, x):
    """U_gamma(x) = (x^gamma - 1)/gamma + gamma, the log for gamma = 0."""
    x = np.asarray(x, dtype=float)
    g = spec.gamma
    if g == 0:
        if np.any(x <= 0):
            raise ValueError("log utility needs positive wealth")
        out = np.log(x)
    else:
        if np.any(x < 0):
            raise ValueError("utility needs non-negative wealth")
        out = np.expm1(g * np.log(x)) / g + g if np.all(x > 0) else (x**g - 1.0) / g + g
    return out if out.ndim else float(out)


def merton_value(params: MarketParams, spec: UtilitySpec, horizon=None) -> float:
    """Optimal expected utility without information, at ``horizon`` (default T)."""
    g = spec.gamma
    if g >= 1:
        raise ValueError("linear utility has no finite value; use divergence_diagnostic")
    h = params.T if horizon is None else horizon
    b2 = float(params.beta_sq_integral(h))
    if g == 0:
        return math.log(params.x0) + params.r * h + 0.5 * b2
    log_scale = g * math.log(params.x0) - math.log(g) + g * params.r * h + 0.5 * g / (1 - g) * b2
    return math.exp(log_scale) + (g * g - 1) / g if log_scale < 700 else math.inf


# -- E[(alpha_t^G)^2] by quadrature over the N(0, t) law of B_t ---------------

def _alpha_sq_density(info: InsiderInfo, x, t):
    """sum_g alpha^g(x,t)^2 P(g|x) times the N(0,t) density at x.

    The g-mixture collapses to N^2 / ((T-t) P(1|x) P(0|x)) with N the shared
    numerator.
    """
    x = np.asarray(x, dtype=float)
    log0, log1 = _log_masses(info, x, t)
    _, log_num = _log_numerator(info, x, t)
    log_w = -0.5 * x * x / t - 0.5 * math.log(t) - LOG_SQRT_2PI
    with np.errstate(invalid="ignore"):
        val = np.exp(2 * log_num - math.log(info.T - t) - log0 - log1 + log_w)
    return np.where(np.isnan(val), 0.0, val)


def _boundaries(info: InsiderInfo, lo, hi):
    if info.kind == "interval":
        return [c for c in (info.c1, info.c2) if lo <= c <= hi]
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def _pieces(info: InsiderInfo, t):
    s, sd = math.sqrt(info.T - t), math.sqrt(t)
    lo, hi = -_GAUSS_REACH * sd, _GAUSS_REACH * sd
    reach = _BOUNDARY_REACH * s
    spans = []
    for c in _boundaries(info, lo - reach, hi + reach):
        a, b = max(c - reach, lo), min(c + reach, hi)
        if a < b:
            spans.append([a, b])
    spans.sort()
    merged = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def composite_gauss(func, cuts, width, tol, max_doublings=8):
    """Composite 20-point Gauss-Legendre over the spans between ``cuts``.

    Spans are cut into panels no wider than ``width``; the panel count is
    doubled until two successive totals agree to ``tol`` (or to 1e-12
    relative, the roundoff floor). ``func`` must be vectorized. Returns
    (value, last change).
    """
    def total(w):
        xs, ws = [], []
        for u, v in zip(cuts, cuts[1:]):
            m = max(1, math.ceil((v - u) / w))
            edges = np.linspace(u, v, m + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            xs.append((mid[:, None] + half[:, None] * _GL_NODES).ravel())
            ws.append((half[:, None] * _GL_WEIGHTS).ravel())
        x, wt = np.concatenate(xs), np.concatenate(ws)
        return float(np.dot(func(x), wt))

    prev = total(width)
    change = math.inf
    for _ in range(max_doublings):
        width *= 0.5
        cur = total(width)
        change = abs(cur - prev)
        prev = cur
        if change <= max(tol, 1e-12 * abs(cur)):
            break
    return prev, change


def expected_alpha_sq(info: InsiderInfo, t, tol=1e-11) -> float:
    """E[(alpha_t^G)^2] for 0 < t < T, to absolute accuracy ~``tol``."""
    if not 0 < t < info.T:
        raise ValueError("t must lie in (0, T)")
    if info.kind == "exact":
        return 1.0 / (info.T - t)
    cuts = set()
    for a, b in _pieces(info, t):
        cuts.update((a, b, *[c for c in _boundaries(info, a, b) if a < c < b]))
        if a < 0.0 < b:
            cuts.add(0.0)
    cuts = sorted(cuts)
    # drop the gaps between separated pieces, where the integrand is negligible
    spans = [(u, v) for u, v in zip(cuts, cuts[1:])
             if any(a <= u and v <= b for a, b in _pieces(info, t))]
    scale = min(math.sqrt(info.T - t), math.sqrt(t))
    total = 0.0
    for u, v in spans:
        val, _ = composite_gauss(lambda x: _alpha_sq_density(info, x, t), [u, v], scale, tol)
        total += val
    return total


def sin2_quad(func, T, t_max=None, epsabs=1e-10, epsrel=1e-10, limit=200):
    """Integral of func over (0, t_max) through t = T sin^2(theta).

    dt = T sin(2 theta) d theta cancels 1/sqrt(t (T - t)) endpoint
    singularities, leaving a bounded integrand.
    """
    t_max = T if t_max is None else t_max
    theta_max = math.asin(math.sqrt(t_max / T))

    def integrand(theta):
        t = T * math.sin(theta) ** 2
        if t <= 0 or t >= T:
            return 0.0
        return func(t) * T * math.sin(2 * theta)

    return integrate.quad(integrand, 0.0, theta_max, epsabs=epsabs, epsrel=epsrel, limit=limit)


def value_of_information(info: InsiderInfo, params: MarketParams | None = None, delta=0.0) -> Estimate:
    """Extra log utility of the insider, 1/2 int_0^{T-delta} E[alpha_t^2] dt."""
    if info.kind == "exact":
        raise ValueError("exact terminal information has infinite value; use divergence_diagnostic")
    if params is not None and not math.isclose(params.T, info.T):
        raise ValueError("market and information horizons differ")
    val, err = sin2_quad(lambda t: expected_alpha_sq(info, t), info.T, info.T - delta,
                         epsabs=1e-10, epsrel=1e-9)
    return Estimate(0.5 * val, None, 0, "finite", {"quad_error": 0.5 * err, "delta": delta})


def binary_entropy(p):
    return -(p * math.log(p) + (1 - p) * math.log1p(-p))


def insider_value_log(info: InsiderInfo, params: MarketParams, delta=0.0) -> Estimate:
    base = merton_value(params, UtilitySpec(0.0))
    if delta:
        base -= params.r * delta + 0.5 * (params.beta_sq_integral(params.T)
                                          - params.beta_sq_integral(params.T - delta))
    voi = value_of_information(info, params, delta)
    return Estimate(base + voi.value, None, 0, "finite", voi.trend)


# -- Monte Carlo ---------------------------------------------------------------

STRATEGIES = ("bond", "merton", "insider")


def simulate_log_wealth(strategy, info, params: MarketParams, gamma, grid, n_paths, seed,
                        condition_g=None):
    """ln X at the last grid node for each path, paths sampled jointly with G."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "insider" and info is None:
        raise ValueError("the insider strategy needs information")
    nodes = grid.nodes
    out = np.empty(n_paths)
    sim_info = info if strategy == "insider" else None
    for ch in iter_paths(grid, n_paths, seed, sim_info, condition_g):
        left = nodes[:-1]
        if strategy == "bond":
            pi = np.zeros((1, left.size))
        elif strategy == "merton":
            pi = merton_fraction(params, left, gamma)[None, :]
        else:
            alpha = drift.alpha_matrix(info, ch.realized(info), ch.b[:, :-1], left)
            pi = insider_fraction(params, alpha, left[None, :], gamma)
        inc = log_wealth_increments(params, nodes, pi, ch.b)
        out[ch.start:ch.stop] = math.log(params.x0) + inc.sum(axis=1)
    return out


def mc_expected_utility(strategy, info, params: MarketParams, spec: UtilitySpec, n_paths, seed,
                        n_steps=1000, delta_frac=None, refinement=None) -> Estimate:
    """Sample mean of U_gamma(X) with its standard error.

    Insider runs use a geometric grid ending at T - delta (delta defaults to
    1e-4 T) because their fraction is singular at T; the other strategies run
    on a uniform grid to T. For gamma = 1 the mean terminal wealth is reported.
    """
    if n_paths < MIN_MC_PATHS:
        raise ValueError(f"need at least {MIN_MC_PATHS} paths")
    g = spec.gamma
    if strategy == "insider":
        delta_frac = 1e-4 if delta_frac is None else delta_frac
        grid = make_grid(params.T, n_steps, delta_frac * params.T, refinement or "geometric")
    else:
        gap = (delta_frac or 0.0) * params.T
        grid = make_grid(params.T, n_steps, gap, refinement or "uniform")
    frac_gamma = min(g, 0.0) if g == 1 else g
    logx = simulate_log_wealth(strategy, info, params, frac_gamma, grid, n_paths, seed)
    vals = np.exp(logx) if g == 1 else utility(spec, np.exp(logx)) if g > 0 else logx
    return Estimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths)), n_paths)


# -- divergence handling -------------------------------------------------------

STABLE_REL_CHANGE = 0.05


def classify_trend(values, min_levels=4):
    """'finite' if the last two levels differ by < 5 %, 'diverging' if the
    sequence keeps growing monotonically, otherwise 'inconclusive'."""
    v = np.asarray(values, dtype=float)
    if v.size < min_levels:
        raise ValueError(f"truncation schedule needs at least {min_levels} levels")
    if np.all(np.isfinite(v[-2:])) and abs(v[-1] - v[-2]) < STABLE_REL_CHANGE * abs(v[-2]):
        return "finite"
    with np.errstate(invalid="ignore"):
        steps = np.diff(v)
    steps[np.isnan(steps) & np.isposinf(v[1:])] = math.inf  # inf - inf along a blow-up
    if np.all(steps >= 0) and v[-1] > v[0]:
        return "diverging"
    return "inconclusive"


def fit_growth(x, y):
    slope, intercept = np.polyfit(np.asarray(x, dtype=float), np.asarray(y, dtype=float), 1)
    return float(slope), float(intercept)


def crra_exponent_paths(info, params: MarketParams, gamma, grid, n_paths, seed, cut_nodes):
    """Per path, int_0^{t_k} (beta + alpha)^2 dt at each cut node index (left-point sums)."""
    nodes = grid.nodes
    left, dt = nodes[:-1], np.diff(nodes)
    beta = params.beta(left)
    out = np.empty((n_paths, len(cut_nodes)))
    for ch in iter_paths(grid, n_paths, seed, info):
        alpha = drift.alpha_matrix(info, ch.realized(info), ch.b[:, :-1], left)
        cum = np.cumsum((beta + alpha) ** 2 * dt, axis=1)
        out[ch.start:ch.stop] = cum[:, np.asarray(cut_nodes) - 1]
    return out


def truncation_grid(T, schedule, steps_per_level):
    """Geometric grid to T - min(schedule) plus the node index closest to each T - delta."""
    deltas = sorted(schedule, reverse=True)
    n_steps = steps_per_level * len(deltas)
    grid = make_grid(T, n_steps, deltas[-1], "geometric")
    cuts = [int(np.argmin(np.abs(grid.nodes - (T - d)))) for d in deltas]
    return grid, deltas, cuts


def log_mean_exp(a, axis=0):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.mean(np.exp(a - m), axis=axis))


def crra_value_from_exponent(params: MarketParams, gamma, log_mean):
    """v_gamma from log E[exp(1/2 gamma/(1-gamma) int theta^2)]."""
    logv = gamma * math.log(params.x0) - math.log(gamma) + gamma * params.r * params.T + log_mean
    return math.exp(logv) + (gamma * gamma - 1) / gamma if logv < 700 else math.inf


DIVERGENCE_CASES = ("example1_log", "gamma_ge_half_interval", "linear_utility_any", "leverage_interval")


def divergence_diagnostic(case, params: MarketParams, schedule, info=None, gamma=0.5, n_paths=2000,
                          seed=0, steps_per_level=250, epsilon=None) -> Estimate:
    """Truncated estimates of a quantity along ``schedule`` with the fitted growth law.

    ``schedule`` holds deltas (example1_log, gamma_ge_half_interval), gammas
    tending to 1 (linear_utility_any) or leverages (leverage_interval).
    """
    if case not in DIVERGENCE_CASES:
        raise ValueError(f"unknown divergence case {case!r}")
    if len(schedule) < 4:
        raise ValueError("truncation schedule needs at least 4 levels")
    T = params.T
    if case == "example1_log":
        info = info or InsiderInfo.exact(T)
        deltas = sorted(schedule, reverse=True)
        closed = [math.log(T / d) for d in deltas]
        means, ses = [], []
        for d in deltas:
            grid = make_grid(T, steps_per_level, d, "geometric")
            logx = simulate_log_wealth("insider", info, params, 0.0, grid, n_paths, seed)
            means.append(float(np.mean(logx)))
            ses.append(float(np.std(logx, ddof=1) / math.sqrt(n_paths)))
        slope, intercept = fit_growth(closed, means)
        trend = {"schedule": deltas, "int_alpha_sq": closed, "mean_log_wealth": means,
                 "std_error": ses, "slope": slope, "intercept": intercept,
                 "law": "1/2 ln(T/delta) + const"}
        return Estimate(math.inf, None, n_paths, "diverging", trend)
    if case == "gamma_ge_half_interval":
        info = info or InsiderInfo.interval(-1.0, 1.0, T)
        grid, deltas, cuts = truncation_grid(T, schedule, steps_per_level)
        expo = crra_exponent_paths(info, params, gamma, grid, n_paths, seed, cuts)
        k = gamma / (1 - gamma)
        logs = [float(log_mean_exp(0.5 * k * expo[:, j])) for j in range(len(cuts))]
        values = [crra_value_from_exponent(params, gamma, lm) for lm in logs]
        flag = classify_trend(values)
        slope, intercept = fit_growth([math.log(T / d) for d in deltas], logs)
        trend = {"schedule": deltas, "values": values, "log_mean_exp": logs, "slope": slope,
                 "intercept": intercept, "law": "log v ~ slope * ln(T/delta)", "gamma": gamma}
        return Estimate(math.inf if flag == "diverging" else values[-1], None, n_paths, flag, trend)
    if case == "linear_utility_any":
        gammas = sorted(schedule)
        values = [merton_value(params, UtilitySpec(g)) for g in gammas]
        flag = classify_trend(values)
        slope, intercept = fit_growth([1 / (1 - g) for g in gammas], [math.log(v + 1e-300) for v in values])
        trend = {"schedule": gammas, "values": values, "slope": slope, "intercept": intercept,
                 "law": "ln v ~ slope / (1 - gamma)"}
        return Estimate(math.inf if flag == "diverging" else values[-1], None, 0, flag, trend)
    # leverage_interval
    from insiderlab.verification import leverage_sweep
    info = info or InsiderInfo.interval(-1.0, 1.0, T)
    levs = sorted(schedule)
    means, ses = leverage_sweep(params, info, levs, n_paths, seed, epsilon=epsilon)
    slope, intercept = fit_growth(levs, means)
    trend = {"schedule": levs, "mean_terminal_wealth": means, "std_error": ses,
             "slope": slope, "intercept": intercept, "law": "E[X_T] affine in M"}
    flag = "diverging" if slope > 0 else "inconclusive"
    return Estimate(math.inf if flag == "diverging" else means[-1], None, n_paths, flag, trend)
