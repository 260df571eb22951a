"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``;
the lines are printed in the terminal summary.
"""

import math
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, load_golden, q23, q34
from rrmcv.design import DesignSpec, design_both_sides, design_limits, solve_p_in
from rrmcv.dist import ChartParams, delta_of, mcv_cdf, mcv_quantile
from rrmcv.monitor import read_gamma_column, run_signal, table10_path
from rrmcv.perf import GridSpec, table_grid
from rrmcv.rulechain import RuleChain, RunRule, Side, build_chain, run_length_moments
from rrmcv.simulate import SimConfig, mc_moments

RULES = ((2, 3), (3, 4), (4, 5))
WORKED = ChartParams(5, 2, 0.089115)
# Fixed before looking at any outcome: cell i of criterion 7 uses seed SEED_BASE + i.
SEED_BASE = 20260101
# (4,5) at p_in = 0.9973 has ARL ~ 4.7e9, so the default run-length cap is raised.
SIM_CAP = 10**13


def record(number, passed, detail):
    ACCEPTANCE_LINES[number] = (bool(passed), detail)
    assert passed, f"criterion {number}: {detail}"


def _tau_key(row, tau_col):
    return (int(row["n"]), int(row["p_dim"]), float(row["gamma0"]), row["rule"], row[tau_col])


def test_criterion_1_table1_limits():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for row in load_golden("golden_limits.csv"):
        params = ChartParams(int(row["n"]), int(row["p_dim"]), float(row["gamma0"]))
        rule = RunRule.parse(row["rule"])
        lower, upper = design_both_sides(params, rule.r, rule.s)
        worst = max(worst, abs(lower.limit - float(row["lcl"])), abs(upper.limit - float(row["ucl"])))
        count += 2
    elapsed = time.perf_counter() - start
    record(1, count == 270 and worst <= 5e-4 and elapsed < 120,
           f"{count} limits, max |diff| {worst:.2e} (tol 5e-4), {elapsed:.1f}s (limit 120s)")


def test_criterion_2_arl_sdrl():
    ours = {
        (r["n"], r["p_dim"], r["gamma0"], r["rule"], r["tau_or_range"]): r
        for r in table_grid(GridSpec("shift"))
    }
    cells, worst, bad = 0, 0.0, 0
    covered = set()
    for g in load_golden("golden_arl.csv"):
        row = ours[(int(g["n"]), int(g["p_dim"]), float(g["gamma0"]), g["rule"], f"{float(g['tau']):g}")]
        diff = max(abs(row["arl1"] - float(g["arl1"])), abs(row["sdrl1"] - float(g["sdrl1"])))
        worst = max(worst, diff)
        bad += diff > 0.2
        cells += 1
        covered.add((g["rule"], g["p_dim"], g["gamma0"]))
    named = [
        ((5, 2, 0.1, "2/3", "0.5"), (14.2, 12.6)),
        ((15, 4, 0.5, "4/5", "1.5"), (7.0, 3.8)),
    ]
    named_ok = all(
        abs(ours[k]["arl1"] - a) <= 0.2 and abs(ours[k]["sdrl1"] - s) <= 0.2 for k, (a, s) in named
    )
    record(2, cells >= 30 and bad == 0 and named_ok and len(covered) == 45,
           f"{cells} cells over all rules/p/gamma0, {bad} outside ±0.2, max |diff| {worst:.3f}, "
           f"named cells {'ok' if named_ok else 'FAILED'}")


def test_criterion_3_delta_arl():
    ours = {
        (r["n"], r["p_dim"], r["gamma0"], r["rule"], r["tau_or_range"]): r
        for r in table_grid(GridSpec("delta_shift"))
    }
    exact = off_by_one = bad = 0
    for g in load_golden("golden_delta_arl.csv"):
        row = ours[(int(g["n"]), int(g["p_dim"]), float(g["gamma0"]), g["rule"], f"{float(g['tau']):g}")]
        diff = abs(round(row["delta"]) - int(g["delta"]))
        exact += diff == 0
        off_by_one += diff == 1
        bad += diff > 1
    named = round(ours[(5, 2, 0.1, "2/3", "0.5")]["delta"])
    record(3, bad == 0 and named == 71 and exact + off_by_one >= 15,
           f"{exact + off_by_one + bad} cells: {exact} exact, {off_by_one} within ±1, {bad} worse; "
           f"(p=2, g0=0.1, tau=0.5, n=5, 2/3) -> {named}")


def test_criterion_4_earl():
    ours = {
        (r["n"], r["p_dim"], r["gamma0"], r["rule"], r["tau_or_range"]): r
        for r in table_grid(GridSpec("range"))
    }
    worst_e = worst_s = 0.0
    bad = cells = 0
    for g in load_golden("golden_earl.csv"):
        row = ours[_tau_key(g, "range")]
        diff = abs(row["earl"] - float(g["earl"]))
        worst_e = max(worst_e, diff)
        worst_s = max(worst_s, abs(row["esdrl"] - float(g["esdrl"])))
        bad += diff > 0.3
        cells += 1
    d = ours[(5, 2, 0.1, "2/3", "D")]["earl"]
    i = ours[(5, 2, 0.1, "2/3", "I")]["earl"]
    named_ok = abs(d - 101.8) <= 0.3 and abs(i - 29.4) <= 0.3
    record(4, cells >= 12 and bad == 0 and named_ok,
           f"{cells} EARL cells, {bad} outside ±0.3, max |diff| {worst_e:.3f}; named (D)={d:.2f} (I)={i:.2f}; "
           f"ESDRL not gated, max |diff| {worst_s:.3f}")


def test_criterion_5_worked_example():
    expected_ucl = {(1, 1): 0.1691, (2, 3): 0.1296, (3, 4): 0.1106, (4, 5): 0.0986}
    expected_signal = {(1, 1): None, (2, 3): 5, (3, 4): 6, (4, 5): 4}
    values = read_gamma_column(table10_path())
    limits_ok, signals = True, {}
    for rs, ucl in expected_ucl.items():
        chart = design_limits(DesignSpec(WORKED, RunRule(*rs, Side.UPPER)))
        limits_ok &= abs(chart.limit - ucl) <= 5e-4
        signals[rs] = run_signal(values, chart.rule, chart.limit, "upper").signal_at
    shown = ", ".join(f"{r}/{s}->{signals[(r, s)]}" for r, s in signals)
    record(5, limits_ok and signals == expected_signal,
           f"limits within 5e-4: {limits_ok}; signals {shown}")


def test_criterion_6_geometric_closed_form():
    worst = 0.0
    for p in (0.5, 0.9, 0.99, 0.9973):
        m = run_length_moments(build_chain(RunRule(1, 1), p))
        worst = max(worst, abs(m.arl - 1 / (1 - p)) * (1 - p),
                    abs(m.sdrl - math.sqrt(p) / (1 - p)) / (math.sqrt(p) / (1 - p)))
    record(6, worst <= 1e-12, f"max relative error {worst:.1e} (tol 1e-12)")


def test_criterion_7_markov_vs_simulation():
    start = time.perf_counter()
    worst, lines, ok = 0.0, [], True
    for index, (rs, p) in enumerate((rs, p) for rs in RULES for p in (0.9, 0.99, 0.9973)):
        rule = RunRule(*rs)
        exact = run_length_moments(build_chain(rule, p)).arl
        est = mc_moments(SimConfig(rule, p, 100_000, seed=SEED_BASE + index, max_run_length=SIM_CAP),
                         workers=4)
        z = (est.arl - exact) / est.arl_se
        worst = max(worst, abs(z))
        ok &= est.complete and abs(z) <= 3
        lines.append(f"{rule.label}@{p}:{z:+.2f}")
    elapsed = time.perf_counter() - start
    record(7, ok and elapsed < 60,
           f"z-scores {' '.join(lines)}; max |z| {worst:.2f} (tol 3), {elapsed:.1f}s (limit 60s)")


def test_criterion_8_generic_vs_hard_coded():
    rng = np.random.default_rng(20260108)
    worst = 0.0
    for p in rng.uniform(0.0, 1.0, 1000):
        for rule, matrix in ((RunRule(2, 3), q23(p)), (RunRule(3, 4), q34(p))):
            init = np.zeros(len(matrix))
            init[-1] = 1.0
            ref = run_length_moments(RuleChain(matrix, init))
            got = run_length_moments(build_chain(rule, p))
            worst = max(worst, abs(got.arl - ref.arl) / ref.arl, abs(got.sdrl - ref.sdrl) / ref.sdrl)
    record(8, worst <= 1e-12, f"1000 random p_in, max relative difference {worst:.1e} (tol 1e-12)")


def test_criterion_9_round_trips():
    taus = (0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0)
    alphas = {0.0027, 0.05, 0.5, 0.95, 0.9973}
    for rs in ((1, 1),) + RULES:
        p_star = solve_p_in(RunRule(*rs), 370.4).p_in
        alphas |= {p_star, 1 - p_star}
    worst, count, max_delta = 0.0, 0, 0.0
    for n in (5, 10, 15):
        for p in (2, 3, 4):
            for g in (0.1, 0.2, 0.3, 0.4, 0.5):
                params = ChartParams(n, p, g)
                for tau in taus:
                    delta = delta_of(params, tau).delta1
                    max_delta = max(max_delta, delta)
                    for alpha in sorted(alphas):
                        x = mcv_quantile(alpha, params, delta)
                        worst = max(worst, abs(mcv_cdf(x, params, delta) - alpha))
                        count += 1
    record(9, worst <= 1e-8 and math.isclose(max_delta, 6000, rel_tol=1e-12),
           f"{count} round trips, max |cdf(quantile(a)) - a| {worst:.1e} (tol 1e-8), "
           f"largest delta {max_delta:.0f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
