"""Allocation rules, self-financing wealth integration and admissibility.

Every stochastic integral is a left-point sum: the holding chosen at node
t_i is applied to the increment over (t_i, t_{i+1}].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from insiderlab import csvio
from insiderlab.drift import InsiderInfo
from insiderlab.market import AssetPaths, BrownianPath, MarketParams, TimeGrid, terminal_stock


def _check_gamma(gamma):
    if not 0 <= gamma < 1:
        raise ValueError(f"optimal fractions need gamma in [0, 1), got {gamma}")


def merton_fraction(params: MarketParams, t, gamma=0.0):
    _check_gamma(gamma)
    return (params.eta_at(t) - params.r) / params.xi**2 / (1.0 - gamma)


def insider_fraction(params: MarketParams, alpha_t, t, gamma=0.0):
    _check_gamma(gamma)
    excess = (params.eta_at(t) - params.r) / params.xi**2 + np.asarray(alpha_t) / params.xi
    return excess / (1.0 - gamma)


@dataclass(frozen=True)
class Admissibility:
    in_hplus: bool
    a: float  # smallest a with X_t - x0 >= -a on the grid
    bankruptcy_nodes: tuple = ()

    @property
    def tag(self):
        if self.in_hplus:
            return "in_Hplus"
        if self.bankruptcy_nodes:
            return "temporary_bankruptcy"
        return f"in_Ha({self.a:.17g})"


def classify_admissibility(values, x0) -> Admissibility:
    values = np.asarray(values, dtype=float)
    in_hplus = bool(values.min() > 0)
    a = max(0.0, float(-(values - x0).min()))
    nodes = ()
    if values[-1] >= 0:
        nodes = tuple(int(i) for i in np.flatnonzero(values < 0))
    return Admissibility(in_hplus, a, nodes)


@dataclass(frozen=True)
class WealthPath:
    grid: TimeGrid
    values: np.ndarray
    admissibility: Admissibility


def log_wealth_increments(params: MarketParams, nodes, pi, b):
    """Per-step increments of ln X for fraction ``pi`` (rows = paths, one column per step)."""
    nodes = np.asarray(nodes, dtype=float)
    dt = np.diff(nodes)
    eta_dt = np.diff(params.eta_integral(nodes))
    pi = np.asarray(pi, dtype=float)
    db = np.diff(np.asarray(b, dtype=float), axis=-1)
    return (params.r * (1.0 - pi) * dt + pi * eta_dt - 0.5 * (pi * params.xi) ** 2 * dt
            + pi * params.xi * db)


def log_wealth_paths(params: MarketParams, nodes, pi, b):
    """ln X on every node for an ensemble; ``pi`` has one column fewer than ``b``."""
    inc = log_wealth_increments(params, nodes, pi, b)
    out = np.empty(inc.shape[:-1] + (inc.shape[-1] + 1,))
    out[..., 0] = np.log(params.x0)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    out[..., 1:] += np.log(params.x0)
    return out


def integrate_wealth_fraction(params: MarketParams, pi, bpath: BrownianPath) -> WealthPath:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (len(bpath.grid) - 1,):
        raise ValueError("pi needs one value per node except the last")
    if not np.all(np.isfinite(pi)):
        raise ValueError("pi must be finite")
    values = np.exp(log_wealth_paths(params, bpath.grid.nodes, pi, bpath.values))
    return WealthPath(bpath.grid, values, classify_admissibility(values, params.x0))


def integrate_wealth_shares(params: MarketParams, bond_units, stock_units, paths: AssetPaths) -> WealthPath:
    """X_t = x0 + sum M dD + sum N dS; holdings are given at every node but the last."""
    m = np.asarray(bond_units, dtype=float)
    n = np.asarray(stock_units, dtype=float)
    steps = len(paths.grid) - 1
    if m.shape != (steps,) or n.shape != (steps,):
        raise ValueError("holdings need one value per node except the last")
    gains = m * np.diff(paths.bond) + n * np.diff(paths.stock)
    values = params.x0 + np.concatenate(([0.0], np.cumsum(gains)))
    return WealthPath(paths.grid, values, classify_admissibility(values, params.x0))


def fraction_to_shares(pi, wealth, paths: AssetPaths):
    """Holdings (M, N) that realize fraction ``pi`` at the given wealth levels."""
    x = np.asarray(wealth, dtype=float)[:-1]
    pi = np.asarray(pi, dtype=float)
    return x * (1.0 - pi) / paths.bond[:-1], x * pi / paths.stock[:-1]


@dataclass(frozen=True)
class StoppingRule:
    kind: str  # "semi_infinite" or "interval_lower"
    epsilon: float
    b1: float | None = None
    leverage: float = 1.0
    realized_time: float | None = None  # None means not triggered
    index: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind == "interval_lower":
            if self.b1 is None or not self.epsilon < self.b1 / 2:
                raise ValueError("need 0 < epsilon < b1 / 2")
            if not self.leverage > 0:
                raise ValueError("leverage must be positive")
        elif self.kind != "semi_infinite":
            raise ValueError(f"unknown stopping rule {self.kind!r}")

    @property
    def triggered(self):
        return self.realized_time is not None


def first_crossing(nodes, stock, level, r, T):
    """Index of the first node t < T with S_t < exp(-r (T - t)) * level, or -1.

    Works row-wise on ensembles; ``level`` may differ per row.
    """
    nodes = np.asarray(nodes, dtype=float)
    stock = np.atleast_2d(stock)
    level = np.broadcast_to(np.asarray(level, dtype=float), (stock.shape[0],))
    barrier = np.exp(-r * (T - nodes))[None, :] * level[:, None]
    hit = (stock < barrier) & (nodes < T)[None, :]
    first = np.argmax(hit, axis=1)
    return np.where(hit.any(axis=1), first, -1)


def barrier_holdings(params: MarketParams, nodes, stock, tau_index, leverage=1.0):
    """Bond/stock units: all in the bond, then from tau on ``leverage`` times the wealth in stock."""
    nodes = np.asarray(nodes, dtype=float)
    stock = np.atleast_2d(stock)
    tau_index = np.atleast_1d(tau_index)
    n_paths, n_nodes = stock.shape
    col = np.arange(n_nodes - 1)[None, :]
    after = (tau_index[:, None] >= 0) & (col >= tau_index[:, None])
    safe = np.where(tau_index >= 0, tau_index, 0)
    rows = np.arange(n_paths)
    units = leverage * params.x0 * np.exp(params.r * nodes[safe]) / stock[rows, safe]
    stock_units = np.where(after, units[:, None], 0.0)
    bond_units = np.where(after, params.x0 * (1.0 - leverage), params.x0)
    return bond_units, stock_units


def barrier_wealth(params: MarketParams, nodes, stock, tau_index, leverage=1.0):
    """Wealth of the buy-at-barrier strategy on each node, for an ensemble."""
    m, n = barrier_holdings(params, nodes, stock, tau_index, leverage)
    bond = np.exp(params.r * np.asarray(nodes))
    gains = m * np.diff(bond)[None, :] + n * np.diff(np.atleast_2d(stock), axis=1)
    out = np.empty(np.atleast_2d(stock).shape)
    out[:, 0] = params.x0
    np.cumsum(gains, axis=1, out=out[:, 1:])
    out[:, 1:] += params.x0
    return out


def interval_lower_bound(params: MarketParams, info: InsiderInfo):
    """b1: the stock level matching B_T = c1 at the horizon."""
    if info.kind != "interval":
        raise ValueError("interval information required")
    return float(terminal_stock(params, info.c1))


def _single(params, paths, level, kind, epsilon, b1, leverage):
    if paths.grid.nodes[-1] != params.T:
        raise ValueError("arbitrage strategies run on grids that reach T")
    tau = int(first_crossing(paths.grid.nodes, paths.stock, level, params.r, params.T)[0])
    m, n = barrier_holdings(params, paths.grid.nodes, paths.stock, tau, leverage)
    wealth = integrate_wealth_shares(params, m[0], n[0], paths)
    rule = StoppingRule(kind, epsilon, b1, leverage,
                        None if tau < 0 else float(paths.grid.nodes[tau]), None if tau < 0 else tau)
    return rule, wealth


def arbitrage_strategy_semiinfinite(params: MarketParams, paths: AssetPaths, b_T: float, epsilon: float):
    """Buy the stock at the first time it is cheap relative to the known S_T.

    On the grid the crossing is detected at the first node strictly below the
    barrier, so S_tau < exp(-r (T - tau)) (S_T - eps) and the realized X_T is
    at least the continuous-crossing value exp(rT) x0 S_T / (S_T - eps).
    """
    s_T = float(terminal_stock(params, b_T))
    if not 0 < epsilon < s_T:
        raise ValueError("need 0 < epsilon < S_T")
    return _single(params, paths, s_T - epsilon, "semi_infinite", epsilon, None, 1.0)


def arbitrage_strategy_interval(params: MarketParams, info: InsiderInfo, paths: AssetPaths,
                                epsilon: float, leverage: float = 1.0, realized_g: int = 1):
    if realized_g != 1:
        raise ValueError("the interval strategy needs the realization G = 1")
    b1 = interval_lower_bound(params, info)
    if not 0 < epsilon < b1 / 2 or not leverage > 0:
        raise ValueError("need 0 < epsilon < b1 / 2 and leverage > 0")
    return _single(params, paths, b1 - epsilon, "interval_lower", epsilon, b1, leverage)


def continuous_crossing_terminal(params: MarketParams, rule: StoppingRule, s_T: float):
    """Terminal wealth the strategy earns when the barrier is crossed continuously."""
    growth = np.exp(params.r * params.T) * params.x0
    if not rule.triggered:
        return growth
    level = s_T - rule.epsilon if rule.kind == "semi_infinite" else rule.b1 - rule.epsilon
    return growth * (rule.leverage * s_T / level + (1.0 - rule.leverage))


def write_wealth_csv(target, nodes, wealth, alloc_cols, alloc, tags):
    """Long-format ensemble dump: path_id, t, X, allocation column(s), admissibility."""
    rows = []
    for pid in range(wealth.shape[0]):
        for j, t in enumerate(nodes):
            extra = [a[pid, j] if j < a.shape[1] else np.nan for a in alloc]
            rows.append([pid, t, wealth[pid, j], *extra, tags[pid]])
    csvio.write_csv(target, ["path_id", "t", "X", *alloc_cols, "admissibility"], rows)


def write_stopping_csv(target, tau, triggered, x_T):
    rows = [(i, t, bool(tr), x) for i, (t, tr, x) in enumerate(zip(tau, triggered, x_T))]
    csvio.write_csv(target, ["path_id", "tau", "triggered", "X_T"], rows)
