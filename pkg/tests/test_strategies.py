import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insiderlab.drift import InsiderInfo, alpha_exact
from insiderlab.market import (
    MarketParams,
    asset_paths,
    make_grid,
    sample_bridge,
    sample_brownian,
    terminal_stock,
)
from insiderlab.strategies import (
    StoppingRule,
    arbitrage_strategy_interval,
    arbitrage_strategy_semiinfinite,
    barrier_wealth,
    classify_admissibility,
    continuous_crossing_terminal,
    first_crossing,
    fraction_to_shares,
    insider_fraction,
    integrate_wealth_fraction,
    integrate_wealth_shares,
    interval_lower_bound,
    merton_fraction,
)

P = MarketParams()


def test_merton_fraction_examples():
    assert merton_fraction(P, 0.3) == pytest.approx(2.0, rel=1e-14)
    assert merton_fraction(P, 0.3, 0.5) == pytest.approx(4.0, rel=1e-14)
    flat = MarketParams(r=0.05, eta=0.05)
    for g in (0.0, 0.3, 0.9):
        assert merton_fraction(flat, 0.5, g) == 0


def test_merton_fraction_follows_piecewise_eta():
    p = MarketParams(eta=((0.0, 0.1), (0.5, 0.22)))
    assert merton_fraction(p, np.array([0.2, 0.7])) == pytest.approx([2.0, 5.0])


def test_insider_fraction_examples():
    assert insider_fraction(P, 0.0, 0.3) == merton_fraction(P, 0.3)
    assert insider_fraction(P, 0.4, 0.3) == pytest.approx(4.0)
    # exact terminal knowledge with B_T - B_t = xi (T - t): alpha / xi = 1
    t = 0.4
    alpha = alpha_exact(P.xi * (1 - t), 0.0, t, 1.0)
    assert insider_fraction(P, alpha, t) == pytest.approx(merton_fraction(P, t) + 1)


@pytest.mark.parametrize("gamma", [1.0, -0.1, 1.5])
def test_fractions_reject_bad_gamma(gamma):
    with pytest.raises(ValueError):
        merton_fraction(P, 0.1, gamma)
    with pytest.raises(ValueError):
        insider_fraction(P, 0.0, 0.1, gamma)


def test_bond_only_wealth():
    grid = make_grid(1.0, 50)
    w = integrate_wealth_fraction(P, np.zeros(50), sample_brownian(grid, 4))
    assert w.values == pytest.approx(np.exp(P.r * grid.nodes), rel=1e-14)
    assert w.admissibility.in_hplus


def test_all_stock_wealth_tracks_stock():
    p = MarketParams(eta=((0.0, 0.1), (0.3, -0.05)), s0=2.0, x0=3.0)
    grid = make_grid(1.0, 80)
    bp = sample_brownian(grid, 9)
    w = integrate_wealth_fraction(p, np.ones(80), bp)
    paths = asset_paths(p, bp)
    assert w.values == pytest.approx(p.x0 * paths.stock / p.s0, rel=1e-12)


def test_wealth_fraction_input_checks():
    grid = make_grid(1.0, 10)
    bp = sample_brownian(grid, 0)
    with pytest.raises(ValueError):
        integrate_wealth_fraction(P, np.zeros(11), bp)
    with pytest.raises(ValueError):
        integrate_wealth_fraction(P, np.full(10, np.nan), bp)


def test_cash_under_zero_rate():
    p = MarketParams(r=0.0)
    grid = make_grid(1.0, 20)
    paths = asset_paths(p, sample_brownian(grid, 1))
    w = integrate_wealth_shares(p, np.full(20, p.x0), np.zeros(20), paths)
    assert np.all(w.values == p.x0)


def test_one_share_telescopes():
    p = MarketParams(r=0.0)
    grid = make_grid(1.0, 40)
    paths = asset_paths(p, sample_brownian(grid, 2))
    w = integrate_wealth_shares(p, np.full(40, p.x0 - p.s0), np.ones(40), paths)
    assert w.values == pytest.approx(p.x0 + paths.stock - p.s0, abs=1e-14)


def test_levered_position_is_hplus_while_wealth_positive():
    p = MarketParams(r=0.0, x0=1.0, s0=1.0)
    grid = make_grid(0.05, 10)
    paths = asset_paths(p, sample_brownian(grid, 5))
    # two shares bought with one unit borrowed: bond leg negative, wealth 2 S - 1
    w = integrate_wealth_shares(p, np.full(10, -1.0), np.full(10, 2.0), paths)
    assert np.all(paths.stock > 0.5)
    assert w.admissibility.in_hplus


def test_classify_admissibility():
    assert classify_admissibility([1.0, 1.2, 0.4], 1.0).tag == "in_Hplus"
    a = classify_admissibility([1.0, 0.5, 0.0, 2.0], 1.0)
    assert not a.in_hplus and a.a == 1.0
    tb = classify_admissibility([1.0, -0.5, -0.1, 0.3], 1.0)
    assert tb.tag == "temporary_bankruptcy" and tb.bankruptcy_nodes == (1, 2)
    neg = classify_admissibility([1.0, -0.5, -0.2], 1.0)
    assert neg.tag.startswith("in_Ha(") and neg.a == 1.5


@given(st.integers(0, 2**32), st.floats(-3, 3), st.floats(0.0, 0.1), st.floats(0.05, 0.6))
@settings(max_examples=60, deadline=None)
def test_shares_from_fraction_realize_the_fraction(seed, level, r, xi):
    p = MarketParams(r=r, eta=0.08, xi=xi)
    grid = make_grid(1.0, 64)
    bp = sample_brownian(grid, seed)
    paths = asset_paths(p, bp)
    pi = level + 0.5 * np.sin(np.arange(64))
    x = integrate_wealth_fraction(p, pi, bp).values
    m, n = fraction_to_shares(pi, x, paths)
    assert m * paths.bond[:-1] + n * paths.stock[:-1] == pytest.approx(x[:-1], rel=1e-12)
    assert n * paths.stock[:-1] == pytest.approx(pi * x[:-1], rel=1e-12, abs=1e-300)


@given(st.integers(0, 2**32), st.floats(-2, 4), st.floats(0.0, 0.1))
@settings(max_examples=60, deadline=None)
def test_rebalanced_shares_reproduce_discrete_wealth(seed, level, r):
    # discrete rebalancing: hold fixed fraction over each step, wealth multiplies
    p = MarketParams(r=r)
    grid = make_grid(1.0, 50)
    paths = asset_paths(p, sample_brownian(grid, seed))
    pi = np.full(50, level)
    growth = (1 - pi) * paths.bond[1:] / paths.bond[:-1] + pi * paths.stock[1:] / paths.stock[:-1]
    if np.any(growth <= 0):
        return
    x = p.x0 * np.concatenate(([1.0], np.cumprod(growth)))
    m, n = fraction_to_shares(pi, x, paths)
    w = integrate_wealth_shares(p, m, n, paths)
    assert w.values == pytest.approx(x, rel=1e-8)


def test_first_crossing():
    nodes = np.array([0.0, 0.5, 1.0])
    stock = np.array([[1.0, 0.8, 0.5], [1.0, 1.1, 1.2]])
    idx = first_crossing(nodes, stock, 0.9, 0.0, 1.0)
    assert idx.tolist() == [1, -1]


def _exact_paths(b_T, seed, n=500):
    grid = make_grid(P.T, n)
    bp = sample_bridge(grid, P.T, b_T, seed)
    return asset_paths(P, bp)


def test_semiinfinite_untriggered_is_bond():
    paths = _exact_paths(3.0, 0)
    rule, w = arbitrage_strategy_semiinfinite(P, paths, 3.0, 0.05)
    if not rule.triggered:
        assert w.values[-1] == pytest.approx(math.exp(P.r * P.T) * P.x0, rel=1e-14)


def test_semiinfinite_triggered_dominates_continuous_value():
    hits = 0
    for seed in range(30):
        b_T = 0.3
        paths = _exact_paths(b_T, seed)
        rule, w = arbitrage_strategy_semiinfinite(P, paths, b_T, 0.05)
        s_T = float(terminal_stock(P, b_T))
        cont = continuous_crossing_terminal(P, rule, s_T)
        assert w.values[-1] >= cont - 1e-12
        assert w.admissibility.in_hplus
        if rule.triggered:
            hits += 1
            assert cont == pytest.approx(math.exp(P.r) * s_T / (s_T - 0.05))
            assert paths.stock[rule.index] < math.exp(-P.r * (1 - rule.realized_time)) * (s_T - 0.05)
    assert hits > 0


def test_semiinfinite_needs_epsilon_below_terminal():
    paths = _exact_paths(0.0, 0, 10)
    with pytest.raises(ValueError):
        arbitrage_strategy_semiinfinite(P, paths, 0.0, 5.0)


def test_interval_strategy_on_g1_paths():
    info = InsiderInfo.interval(-1.0, 1.0)
    b1 = interval_lower_bound(P, info)
    assert b1 == pytest.approx(math.exp(0.1 - 0.02 - 0.2))
    rng = np.random.default_rng(3)
    for seed in range(20):
        b_T = float(rng.uniform(-1, 1))
        paths = _exact_paths(b_T, seed)
        for lev in (1.0, 3.0):
            rule, w = arbitrage_strategy_interval(P, info, paths, 0.05, lev)
            cont = continuous_crossing_terminal(P, rule, float(paths.stock[-1]))
            assert w.values[-1] >= cont - 1e-12
            if lev == 1.0:
                assert w.values[-1] >= math.exp(P.r) * P.x0 - 1e-12
                assert w.admissibility.in_hplus


def test_interval_strategy_argument_checks():
    info = InsiderInfo.interval(-1.0, 1.0)
    paths = _exact_paths(0.0, 0, 10)
    with pytest.raises(ValueError):
        arbitrage_strategy_interval(P, info, paths, 0.05, realized_g=0)
    with pytest.raises(ValueError):
        arbitrage_strategy_interval(P, info, paths, 1.0)
    with pytest.raises(ValueError):
        arbitrage_strategy_interval(P, info, paths, 0.05, leverage=0.0)
    with pytest.raises(ValueError):
        arbitrage_strategy_interval(P, InsiderInfo.exact(), paths, 0.05)


def test_stopping_rule_validation():
    with pytest.raises(ValueError):
        StoppingRule("semi_infinite", 0.0)
    with pytest.raises(ValueError):
        StoppingRule("interval_lower", 0.3, b1=0.5)
    with pytest.raises(ValueError):
        StoppingRule("other", 0.1)


def test_leverage_raises_triggered_payoff_linearly():
    nodes = np.linspace(0, 1, 5)
    stock = np.array([[1.0, 0.6, 0.7, 0.9, 1.0]])
    x = [barrier_wealth(MarketParams(r=0.0), nodes, stock, np.array([1]), lev)[0, -1] for lev in (1, 2, 3)]
    assert np.diff(x) == pytest.approx([1 / 0.6 - 1] * 2)


def test_merton_wealth_mc_log_value():
    from insiderlab.ensemble import iter_paths
    from insiderlab.strategies import log_wealth_increments

    grid = make_grid(1.0, 100)
    pi = merton_fraction(P, grid.nodes[:-1])[None, :]
    vals = np.concatenate([log_wealth_increments(P, grid.nodes, pi, ch.b).sum(axis=1)
                           for ch in iter_paths(grid, 20_000, 11)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 0.1) < 3 * se
