import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from insiderlab import csvio
from insiderlab.drift import (
    InsiderInfo,
    alpha_exact,
    alpha_indicator,
    alpha_on_path,
    conditional_mass,
    mixture_residual,
    write_drift_surface,
)
from insiderlab.market import BrownianPath, make_grid, sample_bridge

INTERVAL = InsiderInfo.interval(-1.0, 1.0)
UNION = InsiderInfo.union()


def union_mass_oracle(x, t, T=1.0, k_max=60):
    """P(B_T in A | B_t = x) by a plain sum over many pieces."""
    s = math.sqrt(T - t)
    ks = np.arange(-k_max, k_max + 1)
    return float(np.sum(norm.cdf((2 * ks - x) / s) - norm.cdf((2 * ks - 1 - x) / s)))


def test_info_validation():
    with pytest.raises(ValueError):
        InsiderInfo.interval(1.0, 1.0)
    with pytest.raises(ValueError):
        InsiderInfo("exact", 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        InsiderInfo("other")


def test_alpha_exact_examples():
    assert alpha_exact(0.3, 0.3, 0.2, 1.0) == 0
    assert alpha_exact(1.0, 0.0, 0.0, 1.0) == 1
    with pytest.raises(ValueError):
        alpha_exact(1.0, 0.0, 1.0, 1.0)


def test_alpha_exact_second_moment():
    # B_T - B_t ~ N(0, T - t) gives E[alpha^2] = 1 / (T - t)
    rng = np.random.default_rng(0)
    t, T, n = 0.6, 1.0, 200_000
    inc = rng.normal(0.0, math.sqrt(T - t), n)
    a2 = alpha_exact(inc, 0.0, t, T) ** 2
    assert abs(a2.mean() - 1 / (T - t)) < 3 * a2.std(ddof=1) / math.sqrt(n)


def test_interval_mass_at_origin():
    assert conditional_mass(INTERVAL, 1, 0.0, 0.0) == pytest.approx(norm.cdf(1) - norm.cdf(-1), rel=1e-14)


@given(st.floats(-15, 15), st.floats(0, 0.999999), st.sampled_from([INTERVAL, UNION]))
@settings(max_examples=300, deadline=None)
def test_masses_are_complementary(x, t, info):
    total = conditional_mass(info, 0, x, t) + conditional_mass(info, 1, x, t)
    assert total == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-6, 6), st.floats(0, 0.99))
@settings(max_examples=150, deadline=None)
def test_union_mass_against_plain_sum(x, t):
    assert conditional_mass(UNION, 1, x, t) == pytest.approx(union_mass_oracle(x, t), abs=1e-12)


def test_union_mass_near_horizon_in_gap():
    # 0.5 lies inside a gap of A
    assert conditional_mass(UNION, 1, 0.5, 1 - 1e-6) < 1e-100
    assert conditional_mass(UNION, 0, 0.5, 1 - 1e-6) == pytest.approx(1.0, abs=1e-15)


def test_union_prior_is_half():
    assert UNION.prior_mass() == pytest.approx(0.5, abs=1e-14)


def test_mass_undefined_for_exact():
    with pytest.raises(ValueError):
        conditional_mass(InsiderInfo.exact(), 1, 0.0, 0.1)
    with pytest.raises(ValueError):
        alpha_indicator(InsiderInfo.exact(), 1, 0.0, 0.1)


@pytest.mark.parametrize("t", [0.0, 0.3, 0.9, 1 - 1e-8])
@pytest.mark.parametrize("g", [0, 1])
def test_symmetric_interval_zero_drift_at_centre(t, g):
    assert alpha_indicator(INTERVAL, g, 0.0, t) == 0


@pytest.mark.parametrize("x", [0.5, -0.5, 2.5])
@pytest.mark.parametrize("t", [0.0, 0.5, 0.99])
def test_union_zero_drift_at_gap_centres(x, t):
    assert abs(alpha_indicator(UNION, 1, x, t)) < 1e-12
    assert abs(alpha_indicator(UNION, 0, x, t)) < 1e-12


def test_interval_drift_against_textbook_formula():
    x, t = 0.3, 0.4
    s = math.sqrt(1 - t)
    z1, z2 = (-1 - x) / s, (1 - x) / s
    num = norm.pdf(z1) - norm.pdf(z2)
    p1 = norm.cdf(z2) - norm.cdf(z1)
    assert alpha_indicator(INTERVAL, 1, x, t) == pytest.approx(num / (s * p1), rel=1e-13)
    assert alpha_indicator(INTERVAL, 0, x, t) == pytest.approx(-num / (s * (1 - p1)), rel=1e-13)


def test_mixture_zero_on_dense_grid():
    xs = np.linspace(-6, 6, 100)
    ts = np.linspace(0, 1 - 1e-6, 100)
    for info in (INTERVAL, UNION):
        worst = max(float(np.max(np.abs(mixture_residual(info, xs, t)))) for t in ts)
        assert worst <= 1e-10


@given(st.floats(-20, -1.0001), st.floats(0, 0.9999))
@settings(max_examples=200, deadline=None)
def test_drift_points_toward_interval_from_below(x, t):
    assert alpha_indicator(INTERVAL, 1, x, t) > 0


@given(st.floats(1.0001, 20), st.floats(0, 0.9999))
@settings(max_examples=200, deadline=None)
def test_drift_points_toward_interval_from_above(x, t):
    assert alpha_indicator(INTERVAL, 1, x, t) < 0


@pytest.mark.parametrize("v,x,t", [(0.0, 0.5, 0.3), (0.4, -0.2, 0.9), (-1.0, 0.0, 0.5)])
def test_narrow_interval_tends_to_exact_drift(v, x, t):
    h = 1e-4
    narrow = InsiderInfo.interval(v - h, v + h)
    assert alpha_indicator(narrow, 1, x, t) == pytest.approx(alpha_exact(v, x, t, 1.0), rel=1e-3)


def test_no_overflow_close_to_horizon():
    xs = np.linspace(-40, 40, 801)
    for t in (0.0, 0.5, 1 - 1e-6, 1 - 1e-10):
        for g in (0, 1):
            a = alpha_indicator(INTERVAL, g, xs, t)
            m = conditional_mass(INTERVAL, g, xs, t)
            assert np.all(np.isfinite(a)) and np.all(np.isfinite(m))


def test_far_tail_drift_follows_nearest_endpoint():
    # the masses underflow as numbers, the log-space ratio does not
    t = 1 - 1e-10
    assert alpha_indicator(INTERVAL, 1, 40.0, t) == pytest.approx((1 - 40.0) / (1 - t), rel=1e-6)
    assert alpha_indicator(INTERVAL, 1, -40.0, t) == pytest.approx((-1 + 40.0) / (1 - t), rel=1e-6)


def test_union_numerator_is_small_on_gaps():
    # sum over pieces of pdf differences stays below 2 in absolute value
    from insiderlab.drift import _log_numerator
    xs = np.linspace(0.001, 0.999, 999)
    for t in np.linspace(0.5, 1 - 1e-4, 30):
        sign, mag = _log_numerator(UNION, xs, t)
        assert np.max(np.abs(sign * np.exp(mag))) <= 2


def test_alpha_on_bridge_path_matches_exact_formula():
    g = make_grid(1.0, 50)
    path = sample_bridge(g, 1.0, 0.8, seed=3)
    a = alpha_on_path(InsiderInfo.exact(), 0.8, path)
    assert a.size == 50
    assert np.allclose(a, (0.8 - path.values[:-1]) / (1.0 - g.nodes[:-1]), rtol=1e-15)


def test_alpha_on_constant_path_is_zero():
    g = make_grid(1.0, 10, 0.01)
    a = alpha_on_path(INTERVAL, 1, BrownianPath(g, np.zeros(11)))
    assert np.all(a == 0)


def test_alpha_on_path_rejects_inconsistent_realization():
    g = make_grid(1.0, 10)
    path = sample_bridge(g, 1.0, 3.0, seed=1)
    with pytest.raises(ValueError):
        alpha_on_path(INTERVAL, 1, path)
    with pytest.raises(ValueError):
        alpha_on_path(InsiderInfo.exact(), 0.0, path)
    with pytest.raises(ValueError):
        alpha_on_path(INTERVAL, 2, path)


def test_drift_surface_csv(tmp_path):
    out = tmp_path / "d.csv"
    write_drift_surface(out, INTERVAL, [-1.0, 0.0, 2.0], [0.0, 0.5])
    header, rows = csvio.read_csv(out)
    assert header == ["t", "x", "g", "alpha", "mass"]
    assert len(rows) == 12
