import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from insiderlab.drift import InsiderInfo
from insiderlab.market import MarketParams, make_grid, sample_bridge
from insiderlab.verification import (
    EXPECTED,
    TableCell,
    Verdict,
    alpha_sq_bound_check,
    compare_pattern,
    default_union_x_grid,
    identity_refinement,
    in_union_set,
    interval_certificate,
    lemma_I,
    lemma_I_bruteforce,
    lemma_I_integral,
    lemma_I_sup,
    log_wealth_decomposition,
    novikov_estimate,
    pathwise_log_wealth_identity,
    read_verdict,
    semiinfinite_certificate,
    union_alpha_bound,
)

P = MarketParams()
I11 = InsiderInfo.interval(-1.0, 1.0)


def _I_textbook(c1, c2, T, x, t):
    # the pdf difference cancels near the symmetry point; carry digits past |x|
    digits = 50 + (int(-math.log10(abs(x))) if 0 < abs(x) < 1 else 0)
    with mpmath.workdps(digits):
        s = mpmath.sqrt(mpmath.mpf(T) - t)
        z1, z2 = (c1 - mpmath.mpf(x)) / s, (c2 - mpmath.mpf(x)) / s
        num = (mpmath.npdf(z1) - mpmath.npdf(z2)) ** 2
        den = s * (mpmath.ncdf(z2) - mpmath.ncdf(z1)) * (mpmath.ncdf(-z2) + mpmath.ncdf(z1))
        return float(num / den)


@given(st.floats(-3, 3), st.floats(0.05, 0.95))
@settings(max_examples=200, deadline=None)
def test_lemma_integrand_matches_textbook_formula(x, t):
    assert lemma_I(-1, 1, 1.0, x, t) == pytest.approx(_I_textbook(-1, 1, 1.0, x, t), rel=1e-9, abs=1e-300)


@given(st.floats(0, 3), st.floats(0.05, 0.95))
@settings(max_examples=100, deadline=None)
def test_lemma_integrand_is_even_for_symmetric_interval(x, t):
    assert lemma_I(-1, 1, 1.0, -x, t) == pytest.approx(lemma_I(-1, 1, 1.0, x, t), rel=1e-12, abs=1e-300)


def test_lemma_half_line_doubles_to_full_line():
    for t in (0.2, 0.5, 0.8):
        full = lemma_I_integral(-1, 1, 1.0, t)
        half = lemma_I_integral(-1, 1, 1.0, t, hi=0.0)
        assert 2 * half == pytest.approx(full, abs=1e-8)


def test_lemma_matches_scipy_quad_and_bruteforce():
    t = 0.5
    val = lemma_I_integral(-1, 1, 1.0, t)
    ref, _ = integrate.quad(lambda x: _I_textbook(-1, 1, 1.0, x, t), -8, 8, points=[-1, 0, 1], limit=100, epsabs=1e-11)
    assert val == pytest.approx(ref, abs=1e-8)
    assert val == pytest.approx(lemma_I_bruteforce(-1, 1, 1.0, t), abs=1e-6)


def test_lemma_asymmetric_interval():
    val = lemma_I_integral(-0.3, 2.0, 2.0, 1.2)
    ref, _ = integrate.quad(lambda x: _I_textbook(-0.3, 2.0, 2.0, x, 1.2), -10, 12, points=[-0.3, 2.0], limit=100,
                            epsabs=1e-11)
    assert val == pytest.approx(ref, abs=1e-8)


def test_lemma_sup_over_grid_is_finite():
    sup, ts, vals = lemma_I_sup(-1, 1, 1.0, n_t=50)
    assert ts.size == 50 and np.all(np.isfinite(vals)) and sup == vals.max()
    assert np.all((ts > 0) & (ts < 1))


def test_lemma_domain():
    with pytest.raises(ValueError):
        lemma_I_integral(1, -1, 1.0, 0.5)
    for t in (0.0, 1.0):
        with pytest.raises(ValueError):
            lemma_I_integral(-1, 1, 1.0, t)


def test_alpha_sq_bound_interval_finite():
    ts = np.linspace(0.01, 0.99, 30)
    fit = alpha_sq_bound_check(I11, ts)
    assert np.all(fit.ratios <= fit.K) and math.isfinite(fit.K)
    assert fit.log_value_bound == pytest.approx(math.pi * fit.K / 2)


def test_alpha_sq_bound_exact_fails():
    ts = np.array([0.5, 0.9, 0.99, 0.999])
    fit = alpha_sq_bound_check(InsiderInfo.exact(), ts)
    assert fit.ratios == pytest.approx(np.sqrt(ts / (1 - ts)))
    assert np.all(np.diff(fit.ratios) > 0)


def test_alpha_sq_bound_grid_check():
    with pytest.raises(ValueError):
        alpha_sq_bound_check(I11, [0.0, 0.5])


def test_union_membership():
    assert in_union_set([-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5]).tolist() == [
        True, True, True, False, True, True, True, False]


def test_union_grid_avoids_A():
    x = default_union_x_grid(100)
    assert not np.any(in_union_set(x))


def test_union_drift_zero_at_gap_centre():
    sup_alpha, _, _ = union_alpha_bound([0.5], [0.5, 0.9, 0.99])
    assert sup_alpha == pytest.approx(0.0, abs=1e-12)


def test_union_bound_rejects_points_in_A():
    with pytest.raises(ValueError):
        union_alpha_bound([0.5, 1.5], [0.5])


def test_union_numerator_bounded_by_two():
    _, sup_num, _ = union_alpha_bound(default_union_x_grid(200), np.linspace(0.9, 1 - 1e-4, 20))
    assert sup_num <= 2


def test_union_drift_grows_like_distance_over_time_to_go():
    # near T the drift at distance d from A behaves like d / (T - t) + 1 / d
    sup_alpha, _, (x, t) = union_alpha_bound([0.9], [1 - 1e-3])
    assert sup_alpha == pytest.approx(0.1 / 1e-3 + 1 / 0.1, rel=0.05)


def test_log_wealth_identity_trivial_path():
    # B_T = 0, eta = r: all beta terms vanish
    p = MarketParams(r=0.03, eta=0.03)
    grid = make_grid(1.0, 4000, 1e-3, "geometric")
    bp = sample_bridge(grid, 1.0, 0.0, 4)
    dec = log_wealth_decomposition(p, grid.nodes, bp.values, 0.0)[0]
    t = grid.nodes
    assert dec == pytest.approx(-0.5 * bp.values**2 / (1 - t) + 0.5 * np.log(1 / (1 - t)), abs=1e-12)
    res = pathwise_log_wealth_identity(p, bp.values[None, :], np.array([0.0]), grid.nodes)
    assert abs(res[0]) < 0.2


def test_log_wealth_identity_refines():
    steps, rms, mean_abs = identity_refinement(P, 200, 1e-3, 250, 4, seed=1)
    assert steps == [250, 500, 1000, 2000]
    assert np.all(np.diff(rms) < 0)
    assert np.all(np.diff(mean_abs) < 0)


def test_semiinfinite_certificate_small():
    cert = semiinfinite_certificate(P, 500, 200, seed=2)
    assert cert.min_excess >= -1e-12 and cert.all_in_hplus and cert.strict_fraction > 0.01
    assert cert.detected


def test_interval_certificate_small():
    cert = interval_certificate(P, I11, 500, 200, seed=2)
    assert cert.detected


def test_unjustified_barrier_loses_money():
    # no information: buying at the c = -1 barrier is not an arbitrage
    free = InsiderInfo.interval(-50.0, 50.0)
    cert = interval_certificate(P, free, 500, 200, seed=2, lower=-1.0)
    assert cert.min_excess < 0 and not cert.detected


def test_novikov_interval_diverges_small():
    est = novikov_estimate(I11, P, n_paths=300, steps_per_level=100, seed=3)
    vals = est.trend["values"]
    assert np.all(np.diff(vals) >= 0)
    assert est.divergence == "diverging"
    assert est.trend["max_over_mean"] >= 1


def test_verdict_round_trip(tmp_path):
    v = Verdict("lemma_I", "pass", 2.757970182915480, 1e-6, (0.1, 0.01), {"note": "ok", "n": 3})
    text = v.render()
    assert text.splitlines()[:5] == [
        "check_name=lemma_I", "status=pass", "statistic=2.7579701829154799",
        "threshold=9.9999999999999995e-07", "schedule=[0.1, 0.01]"]
    path = tmp_path / "v.txt"
    v.write(path)
    got = read_verdict(path)
    assert got["status"] == "pass" and float(got["statistic"]) == v.statistic and got["n"] == "3"


def _cells(flags):
    return [TableCell(r, c, f, [], "x") for (r, c), f in flags.items()]


def test_compare_pattern():
    good = {(r, c): f for r, cols in EXPECTED.items() for c, f in cols.items()}
    assert compare_pattern(_cells(good)) == ("match", [])
    unsure = dict(good)
    unsure[("F", "u")] = "inconclusive"
    assert compare_pattern(_cells(unsure))[0] == "inconclusive"
    bad = dict(unsure)
    bad[("exact", "u")] = "finite"
    status, off = compare_pattern(_cells(bad))
    assert status == "mismatch" and [(c.row, c.column) for c in off] == [("exact", "u")]
    # cells without an expectation are ignored
    extra = dict(good)
    extra[("interval", "v_0.25")] = "diverging"
    assert compare_pattern(_cells(extra))[0] == "match"
