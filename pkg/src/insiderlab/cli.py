"""Command-line runner: ``insiderlab <command> [--config FILE] [--out DIR] ...``.

Exit codes: 0 pass, 1 fail, 2 inconclusive, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from insiderlab import config as cfgmod
from insiderlab import csvio, drift, verification
from insiderlab.drift import InsiderInfo
from insiderlab.ensemble import iter_paths
from insiderlab.market import make_grid, stock_from_brownian, terminal_stock
from insiderlab.strategies import (
    barrier_wealth,
    classify_admissibility,
    first_crossing,
    insider_fraction,
    interval_lower_bound,
    log_wealth_paths,
    merton_fraction,
    write_stopping_csv,
)
from insiderlab.utility import (
    STABLE_REL_CHANGE,
    Estimate,
    UtilitySpec,
    divergence_diagnostic,
    insider_value_log,
    mc_expected_utility,
    merton_value,
)

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 64
CHECKS = ("lemma_I", "alpha_sq_bound", "novikov", "union_alpha_bound", "log_wealth_identity",
          "example1_divergence", "arbitrage")
RESULT_HEADER = ["case", "gamma", "method", "value", "std_error", "n", "divergence_flag", "schedule_json"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _status_code(status):
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(status, EXIT_INCONCLUSIVE)


def _estimate_row(case, gamma, method, est: Estimate, schedule=None):
    sched = json.dumps(est.trend) if est.trend and schedule is None else json.dumps(schedule or [])
    return [case, gamma, method, est.value, est.std_error, est.n, est.divergence, sched]


# -- simulate ---------------------------------------------------------------------

def _strategy_grid(cfg, strategy):
    p = cfg.market()
    if strategy == "insider":
        return make_grid(p.T, cfg["sim.n_steps"], cfg.delta, cfg["sim.refinement"])
    return make_grid(p.T, cfg["sim.n_steps"])


def cmd_simulate(cfg, out: Path):
    p, strategy, gamma = cfg.market(), cfg["run.strategy"], cfg["utility.gamma"]
    if gamma >= 1:
        raise UsageError("simulate needs utility.gamma < 1")
    info = cfg.info() if strategy == "insider" else None
    grid = _strategy_grid(cfg, strategy)
    nodes, left = grid.nodes, grid.nodes[:-1]
    n_paths, keep = cfg["sim.n_paths"], cfg["run.export_paths"]
    final = np.empty(n_paths)
    path_rows, wealth_rows = [], []
    for ch in iter_paths(grid, n_paths, cfg["sim.seed"], info):
        if strategy == "bond":
            pi = np.zeros((ch.b.shape[0], left.size))
        elif strategy == "merton":
            pi = np.broadcast_to(merton_fraction(p, left, gamma), (ch.b.shape[0], left.size))
        else:
            alpha = drift.alpha_matrix(info, ch.realized(info), ch.b[:, :-1], left)
            pi = insider_fraction(p, alpha, left[None, :], gamma)
        logx = log_wealth_paths(p, nodes, pi, ch.b)
        final[ch.start:ch.stop] = logx[:, -1]
        for j in range(max(0, min(keep - ch.start, ch.b.shape[0]))):
            pid = ch.start + j
            stock = stock_from_brownian(p, nodes, ch.b[j])
            x = np.exp(logx[j])
            tag = classify_admissibility(x, p.x0).tag
            for k, t in enumerate(nodes):
                path_rows.append((pid, t, ch.b[j, k], stock[k], math.exp(p.r * t)))
                wealth_rows.append((pid, t, x[k], pi[j, k] if k < left.size else math.nan, tag))
    csvio.write_csv(out / "paths.csv", ["path_id", "t", "B", "S", "D"], path_rows)
    csvio.write_csv(out / "wealth.csv", ["path_id", "t", "X", "pi", "admissibility"], wealth_rows)
    mean = float(final.mean())
    se = float(final.std(ddof=1) / math.sqrt(n_paths))
    rows = [["mean_log_wealth", mean], ["std_error", se], ["n_paths", n_paths], ["t_end", float(nodes[-1])]]
    status = "pass"
    if strategy == "merton" and gamma == 0:
        target = merton_value(p, UtilitySpec(0.0))
        rows.append(["closed_form", target])
        status = "pass" if abs(mean - target) <= 3 * se else "fail"
    csvio.write_csv(out / "summary.csv", ["quantity", "value"], rows)
    return _status_code(status)


# -- drift ------------------------------------------------------------------------

def cmd_drift(cfg, out: Path):
    info = cfg.info()
    xs = np.asarray(cfg["run.drift_x"], dtype=float)
    ts = [t * info.T for t in cfg["run.drift_t"]]
    if any(not 0 <= t < info.T for t in ts):
        raise UsageError("run.drift_t entries must lie in [0, 1)")
    if info.kind == "exact":
        # no conditional mass; g holds the realized B_T
        rows = [(t, x, v, drift.alpha_exact(v, x, t, info.T), math.nan)
                for t in ts for v in (-1.0, 0.0, 1.0) for x in xs]
        csvio.write_csv(out / "drift.csv", ["t", "x", "g", "alpha", "mass"], rows)
    else:
        drift.write_drift_surface(out / "drift.csv", info, xs, ts)
    return EXIT_PASS


# -- value ------------------------------------------------------------------------

def cmd_value(cfg, out: Path):
    p, info, gamma = cfg.market(), cfg.info(), cfg["utility.gamma"]
    spec = UtilitySpec(gamma)
    n, seed, steps = cfg["sim.n_paths"], cfg["sim.seed"], cfg["sim.n_steps"]
    rows, ok = [], True
    if gamma < 1:
        closed = merton_value(p, spec)
        mc = mc_expected_utility("merton", None, p, spec, n, seed, steps)
        rows.append(["F", gamma, "closed_form", closed, None, 0, "finite", "[]"])
        rows.append(_estimate_row("F", gamma, "mc", mc, []))
        ok &= mc.within(closed)
    else:
        lin = divergence_diagnostic("linear_utility_any", p, verification.LINEAR_GAMMAS)
        rows.append(_estimate_row("F", gamma, "closed_form", lin))
    if info.kind == "exact":
        est = divergence_diagnostic("example1_log", p, [d * p.T for d in cfg["run.schedule"]], info,
                                    n_paths=n, seed=seed, steps_per_level=steps)
        rows.append(_estimate_row("exact", gamma, "mc", est))
        ok &= abs(est.trend["slope"] - 0.5) <= 0.05
    elif gamma == 0:
        quad = insider_value_log(info, p, cfg.delta)
        mc = mc_expected_utility("insider", info, p, spec, n, seed, steps, cfg["sim.delta_frac"],
                                 cfg["sim.refinement"])
        rows.append(_estimate_row(info.kind, gamma, "quadrature", quad, [cfg.delta]))
        rows.append(_estimate_row(info.kind, gamma, "mc", mc, [cfg.delta]))
        ok &= math.isfinite(quad.value) and mc.within(quad.value)
    elif gamma < 1:
        mc = mc_expected_utility("insider", info, p, spec, n, seed, steps, cfg["sim.delta_frac"],
                                 cfg["sim.refinement"])
        rows.append(_estimate_row(info.kind, gamma, "mc", mc, [cfg.delta]))
    csvio.write_csv(out / "results.csv", RESULT_HEADER, rows)
    return EXIT_PASS if ok else EXIT_FAIL


# -- arbitrage --------------------------------------------------------------------

def _stopping_report(cfg, info, out: Path):
    p = cfg.market()
    eps = cfg["run.epsilon_frac"] * p.s0
    grid = make_grid(p.T, cfg["run.arb_steps"])
    tau_t, trig, x_T = [], [], []
    cond = 1 if info.kind == "interval" else None
    for ch in iter_paths(grid, cfg["run.arb_paths"], cfg["sim.seed"], info, condition_g=cond):
        stock = stock_from_brownian(p, grid.nodes, ch.b)
        if info.kind == "exact":
            level = terminal_stock(p, ch.b_T) - eps
        else:
            level = interval_lower_bound(p, info) - eps
        tau = first_crossing(grid.nodes, stock, level, p.r, p.T)
        w = barrier_wealth(p, grid.nodes, stock, tau)
        tau_t.extend(np.where(tau >= 0, grid.nodes[np.maximum(tau, 0)], math.nan))
        trig.extend(tau >= 0)
        x_T.extend(w[:, -1])
    write_stopping_csv(out / "stopping.csv", tau_t, trig, x_T)


def _arbitrage_verdict(cfg):
    p, info = cfg.market(), cfg.info()
    eps = cfg["run.epsilon_frac"] * p.s0
    n, steps, seed = cfg["run.arb_paths"], cfg["run.arb_steps"], cfg["sim.seed"]
    if info.kind == "exact":
        cert = verification.semiinfinite_certificate(p, n, steps, eps, seed)
        expect = True
    elif info.kind == "interval":
        cert = verification.interval_certificate(p, info, n, steps, eps, seed=seed)
        expect = True
    else:
        certs = [verification.interval_certificate(p, info, n, steps, eps, seed=seed, lower=c)
                 for c in verification.UNION_TEST_LOWER_ENDS]
        cert = min(certs, key=lambda c: c.min_excess)
        detected = any(c.detected for c in certs)
        return verification.Verdict(
            "arbitrage", "pass" if not detected else "fail", cert.min_excess, -1e-12, (),
            {"kind": info.kind, "arbitrage": "detected" if detected else "not_detected",
             "lower_ends": list(verification.UNION_TEST_LOWER_ENDS)})
    status = "pass" if cert.detected == expect else "fail"
    return verification.Verdict(
        "arbitrage", status, cert.min_excess, -1e-12, (),
        {"kind": info.kind, "arbitrage": "detected" if cert.detected else "not_detected",
         "strict_fraction": cert.strict_fraction, "all_in_hplus": cert.all_in_hplus, "n": cert.n})


def cmd_arbitrage(cfg, out: Path):
    p, info = cfg.market(), cfg.info()
    verdict = _arbitrage_verdict(cfg)
    verdict.write(out / "verdict_arbitrage.txt")
    if info.kind in ("exact", "interval"):
        _stopping_report(cfg, info, out)
    if info.kind == "interval":
        levs = cfg["run.leverages"]
        means, ses = verification.leverage_sweep(p, info, levs, cfg["sim.n_paths"], cfg["sim.seed"],
                                                 cfg["run.epsilon_frac"] * p.s0, cfg["run.arb_steps"])
        csvio.write_csv(out / "leverage.csv", ["leverage", "mean_X_T", "std_error"], zip(levs, means, ses))
    return _status_code(verdict.status)


# -- verify -----------------------------------------------------------------------

def run_check(name, cfg) -> verification.Verdict:
    p, info = cfg.market(), cfg.info()
    schedule = tuple(cfg["run.schedule"])
    if name == "lemma_I":
        c1, c2 = (info.c1, info.c2) if info.kind == "interval" else (-1.0, 1.0)
        sup, ts, _ = verification.lemma_I_sup(c1, c2, p.T)
        mid = 0.5 * p.T
        diff = abs(verification.lemma_I_integral(c1, c2, p.T, mid)
                   - verification.lemma_I_bruteforce(c1, c2, p.T, mid))
        status = "pass" if math.isfinite(sup) and diff <= 1e-6 else "fail"
        return verification.Verdict(name, status, sup, math.inf, (),
                                    {"bruteforce_gap_at_half": diff, "n_t": len(ts)})
    if name == "alpha_sq_bound":
        t_grid = p.T * (np.arange(50) + 0.5) / 50
        fit = verification.alpha_sq_bound_check(info, t_grid)
        status = "pass" if info.kind != "exact" and math.isfinite(fit.K) else "fail"
        return verification.Verdict(name, status, fit.K, math.inf, (),
                                    {"kind": info.kind, "log_value_bound": fit.log_value_bound})
    if name == "novikov":
        est = verification.novikov_estimate(info, p, cfg["sim.n_paths"], schedule, cfg["sim.seed"],
                                            cfg["run.steps_per_level"])
        expected = "finite" if info.kind == "union" else "diverging"
        status = "inconclusive" if est.divergence == "inconclusive" else (
            "pass" if est.divergence == expected else "fail")
        return verification.Verdict(name, status, est.trend["values"][-1], STABLE_REL_CHANGE,
                                    schedule, {"kind": info.kind, "classification": est.divergence,
                                               "expected": expected, "values": est.trend["values"],
                                               "max_over_mean": est.trend["max_over_mean"]})
    if name == "union_alpha_bound":
        t_grid = np.linspace(0.9 * p.T, p.T - cfg.delta, 200)
        sup, sup_num, where = verification.union_alpha_bound(verification.default_union_x_grid(), t_grid, p.T)
        status = "pass" if sup <= 3 + 1e-6 and sup_num <= 2 else "fail"
        return verification.Verdict(name, status, sup, 3 + 1e-6, (),
                                    {"numerator_sup": sup_num, "argmax_x": where[0], "argmax_t": where[1]})
    if name == "log_wealth_identity":
        steps, rms, _ = verification.identity_refinement(p, min(cfg["sim.n_paths"], 1000), 1e-3,
                                                         cfg["sim.n_steps"], 4, cfg["sim.seed"])
        shrinking = all(b < a for a, b in zip(rms, rms[1:]))
        return verification.Verdict(name, "pass" if shrinking else "fail", rms[-1], rms[0], (),
                                    {"steps": steps, "rms_residual": rms})
    if name == "example1_divergence":
        est = divergence_diagnostic("example1_log", p, [d * p.T for d in schedule], n_paths=cfg["sim.n_paths"],
                                    seed=cfg["sim.seed"], steps_per_level=cfg["sim.n_steps"])
        slope = est.trend["slope"]
        return verification.Verdict(name, "pass" if abs(slope - 0.5) <= 0.05 else "fail", slope, 0.05,
                                    schedule, {"means": est.trend["mean_log_wealth"]})
    if name == "arbitrage":
        return _arbitrage_verdict(cfg)
    raise UsageError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")


def cmd_verify(cfg, out: Path, check):
    verdict = run_check(check, cfg)
    verdict.write(out / f"verdict_{check}.txt")
    return _status_code(verdict.status)


# -- table1 -----------------------------------------------------------------------

def cmd_table1(cfg, out: Path):
    budgets = verification.Budgets(
        n_paths=cfg["sim.n_paths"], steps_per_level=cfg["run.steps_per_level"],
        arb_paths=cfg["run.arb_paths"], arb_steps=cfg["run.arb_steps"],
        schedule=tuple(cfg["run.schedule"]), seed=cfg["sim.seed"])
    cells = verification.classification_table(cfg.market(), budgets)
    verification.write_table_csv(out / "table1.csv", cells)
    outcome, offending = verification.compare_pattern(cells)
    if not budgets.sufficient:
        status = "inconclusive"
    else:
        status = {"match": "pass", "mismatch": "fail"}.get(outcome, "inconclusive")
    verification.Verdict(
        "table1", status, float(len(offending)), 0.0, budgets.schedule,
        {"pattern": outcome, "budget_sufficient": budgets.sufficient,
         "offending": [f"{c.row}:{c.column}={c.flag}" for c in offending]},
    ).write(out / "verdict_table1.txt")
    return _status_code(status)


# -- figure-tau -------------------------------------------------------------------

def cmd_figure_tau(cfg, out: Path):
    p, info = cfg.market(), cfg.info()
    if info.kind != "exact":
        raise UsageError("figure-tau needs info.kind = exact")
    grid = make_grid(p.T, cfg["sim.n_steps"])
    eps = cfg["run.epsilon_frac"] * p.s0
    first = cfg["sim.seed"]
    for seed in range(first, first + cfg["run.seed_scan"]):
        ch = next(iter_paths(grid, 1, seed, info))
        s_T = float(terminal_stock(p, ch.b_T[0]))
        if s_T <= eps:
            continue
        stock = stock_from_brownian(p, grid.nodes, ch.b[0])
        tau = int(first_crossing(grid.nodes, stock, s_T - eps, p.r, p.T)[0])
        if tau < 0:
            continue
        barrier = np.exp(-p.r * (p.T - grid.nodes)) * (s_T - eps)
        marker = np.zeros(grid.nodes.size, dtype=int)
        marker[tau] = 1
        csvio.write_csv(out / "figure_tau.csv", ["t", "S", "barrier", "triggered_at"],
                        zip(grid.nodes, stock, barrier, marker))
        csvio.atomic_write(out / "figure_tau_seed.txt", f"seed={seed}\ntau={csvio.fmt(float(grid.nodes[tau]))}\n")
        return EXIT_PASS
    print(f"no triggered path within {cfg['run.seed_scan']} seeds from {first}", file=sys.stderr)
    return EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "drift": cmd_drift,
    "value": cmd_value,
    "arbitrage": cmd_arbitrage,
    "table1": cmd_table1,
    "figure-tau": cmd_figure_tau,
}


def build_parser():
    parser = _Parser(prog="insiderlab", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, help="override sim.seed")
    common.add_argument("--paths", type=int, help="override sim.n_paths")
    common.add_argument("--steps", type=int, help="override sim.n_steps")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    verify = sub.add_parser("verify", parents=[common])
    verify.add_argument("check", choices=CHECKS)
    return parser


def load_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    for flag, key in (("seed", "sim.seed"), ("paths", "sim.n_paths"), ("steps", "sim.n_steps")):
        value = getattr(args, flag)
        if value is not None:
            cfg.set(key, value)
    return cfg.validate()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        csvio.atomic_write(out / "manifest.cfg", cfg.render())
        if args.command == "verify":
            return cmd_verify(cfg, out, args.check)
        return COMMANDS[args.command](cfg, out)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"insiderlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"insiderlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
