"""Acceptance criteria at their stated tolerances, 10**4 trials per cell.

Each test prints one ``C<k> PASS|FAIL <detail>`` line. The simulation runs
take several minutes on one core and are shared through module caches.
"""

import functools
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from nphtrial.cli import main as cli_main
from nphtrial.harness import (
    RunSpec,
    power_vs_events,
    power_vs_tstar,
    run_grid,
    run_null_equal_threshold,
)
from nphtrial.numerics import RngStream, relative_efficiency
from nphtrial.simgen import ScenarioSpec, TrialDesign, calibrate_dropout, simulate_trial

N_SIMS = 10_000
SEED = 2021
WORKERS = os.cpu_count() or 1
TESTS = ("logrank", "fh(0,1)", "fh(1,1)", "fh(1,0)", "rmst_diff")

DELAYS = (0, 1, 2, 3, 4)
CROSSINGS = (0, 3, 6, 9, 12)
DECREASES = (0, 2, 4, 6, 8, 10)
CELLS = ((ScenarioSpec(),)
         + tuple(ScenarioSpec("delayed", t) for t in DELAYS)
         + tuple(ScenarioSpec("crossing", t) for t in CROSSINGS)
         + tuple(ScenarioSpec("decreasing", t) for t in DECREASES))

# Null cells with distinct data: the other equal-survival cells share the
# control arm of the PH cell, and decreasing 0/2/4 coincide with
# equal_threshold 0/2/4.
EQUAL_SURVIVAL_NULLS = (ScenarioSpec(),) + tuple(ScenarioSpec("decreasing", t) for t in (6, 8, 10))
FIG3_CELLS = {"proportional": 0, "delayed": 4, "crossing": 9, "decreasing": 9}
TSTAR_GRID = tuple(range(2, 23, 2))


@functools.cache
def design_and_dropout() -> tuple[TrialDesign, float]:
    design = TrialDesign()
    cal = calibrate_dropout(TrialDesign(analysis_mode="calendar"), ScenarioSpec())
    return design, cal.rate


@functools.cache
def main_grid():
    design, rate = design_and_dropout()
    return run_grid(RunSpec(design=design, scenarios=CELLS, n_sims=N_SIMS, master_seed=SEED,
                            dropout_rate=rate, workers=WORKERS))


@functools.cache
def null_grids():
    design, rate = design_and_dropout()
    base = dict(design=design, tests=TESTS, estimators=(), n_sims=N_SIMS, master_seed=SEED,
                dropout_rate=rate, workers=WORKERS)
    eq = run_grid(RunSpec(scenarios=EQUAL_SURVIVAL_NULLS, null_mode="equal_survival", **base))
    thr = run_null_equal_threshold(RunSpec(null_mode="equal_threshold", **base), DELAYS)
    return eq, thr


@functools.cache
def power_at_258(pattern: str, threshold: float):
    design, rate = design_and_dropout()
    ((_, p, se),) = power_vs_events(design, ScenarioSpec(pattern, threshold), [design.target_events],
                                    n_sims=N_SIMS, seed=SEED, dropout_rate=rate, workers=WORKERS)
    return p, se


@functools.cache
def tstar_curve(pattern: str):
    design, rate = design_and_dropout()
    return power_vs_tstar(design, ScenarioSpec(pattern, FIG3_CELLS[pattern]), TSTAR_GRID,
                          n_sims=N_SIMS, seed=SEED, dropout_rate=rate, workers=WORKERS)


def _within(value, target, tol):
    return abs(value - target) <= tol


def test_c1_relative_efficiency(verdict, capsys, tmp_path):
    assert cli_main(["reproduce", "releff", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    value = float(out[-1].split(",")[-1])
    ok = _within(value, 1.82, 0.005) and value == round(relative_efficiency(0.90, 0.67, 0.025), 4)
    assert verdict("C1", ok, f"relative efficiency {value:.4f} (target 1.82 +/- 0.005)")


def test_c2_ph_power(verdict):
    p, se = power_at_258("proportional", 0)
    ok = _within(p, 0.90, 0.01)
    assert verdict("C2", ok, f"PH log-rank power at 258 events {p:.4f} (se {se:.4f}; target 0.90 +/- 0.01)")


def test_c3_delayed_power(verdict):
    p, se = power_at_258("delayed", 2)
    ok = _within(p, 0.67, 0.02)
    assert verdict("C3", ok, f"delay-2 log-rank power at 258 events {p:.4f} (se {se:.4f}; "
                             f"target 0.67 +/- 0.02)")


def _rmst_table(pattern, thresholds):
    s = main_grid()
    ctrl = [s.value(pattern, t, "rmst", "rmst_control") for t in thresholds]
    exp = [s.value(pattern, t, "rmst", "rmst_experimental") for t in thresholds]
    diff = [s.value(pattern, t, "rmst_diff", "mean_estimate") for t in thresholds]
    return ctrl, exp, diff


def _mismatches(label, values, targets, tol):
    return [f"{label}[{i}] {v:.3f} vs {t}" for i, (v, t) in enumerate(zip(values, targets))
            if not _within(v, t, tol)]


def test_c4_table1_delayed(verdict):
    ctrl, exp, diff = _rmst_table("delayed", DELAYS)
    bad = (_mismatches("control", ctrl, (8.0, 8.0, 7.9, 7.9, 7.9), 0.15)
           + _mismatches("experimental", exp, (10.6, 10.1, 9.8, 9.4, 9.2), 0.15)
           + _mismatches("difference", diff, (2.6, 2.1, 1.9, 1.5, 1.3), 0.2))
    detail = "differences " + "/".join(f"{d:.3f}" for d in diff)
    assert verdict("C4", not bad, detail + ("; off: " + "; ".join(bad) if bad else ""))


def test_c5_table2_crossing(verdict):
    _, _, diff = _rmst_table("crossing", CROSSINGS)
    bad = _mismatches("difference", diff, (-2.1, -0.6, 0.4, 1.2, 1.8), 0.2)
    detail = "differences " + "/".join(f"{d:.3f}" for d in diff)
    assert verdict("C5", not bad, detail + ("; off: " + "; ".join(bad) if bad else ""))


def test_c6_table3_decreasing(verdict):
    _, _, diff = _rmst_table("decreasing", DECREASES)
    bad = _mismatches("difference", diff, (0.0, 0.8, 1.3, 1.8, 2.1, 2.3), 0.2)
    detail = "differences " + "/".join(f"{d:.3f}" for d in diff)
    assert verdict("C6", not bad, detail + ("; off: " + "; ".join(bad) if bad else ""))


ANCHORS = (
    ("proportional", 0, "hr", 0.67),
    ("delayed", 4, "hr", 0.82),
    ("delayed", 4, "whr(0,1)", 0.73),
    ("delayed", 4, "whr(1,0)", 0.87),
    ("delayed", 4, "rmst_ratio", 0.86),
    ("crossing", 6, "whr(0,1)", 1.18),
    ("crossing", 6, "whr(1,0)", 0.85),
    ("crossing", 0, "hr", 1.5),
    ("crossing", 12, "rmst_ratio", 0.91),
    ("decreasing", 10, "hr", 0.74),
    ("decreasing", 10, "rmst_ratio", 0.78),
)


def test_c7_effect_anchors(verdict):
    s = main_grid()
    bad = []
    for pattern, th, method, target in ANCHORS:
        v = s.value(pattern, th, method, "mean_estimate")
        if not _within(v, target, 0.03):
            bad.append(f"{pattern}-{th} {method} {v:.3f} vs {target}")
    detail = f"{len(ANCHORS) - len(bad)}/{len(ANCHORS)} anchors within 0.03"
    assert verdict("C7", not bad, detail + ("; off: " + "; ".join(bad) if bad else ""))


def test_c8_power_orderings(verdict):
    s = main_grid()
    bad = []
    for th in DELAYS[1:]:
        g01, lr, g10 = (s.value("delayed", th, m) for m in ("fh(0,1)", "logrank", "fh(1,0)"))
        if not g01 >= lr >= g10:
            bad.append(f"delayed-{th} G01 {g01:.4f} LR {lr:.4f} G10 {g10:.4f}")
    for th in CROSSINGS:
        power = {m: s.value("crossing", th, m) for m in TESTS}
        if power["fh(1,0)"] < max(power.values()) or power["fh(0,1)"] > min(power.values()):
            bad.append(f"crossing-{th} " + " ".join(f"{m} {v:.4f}" for m, v in power.items()))
    for sc in CELLS:
        lr = s.value(sc.pattern, sc.threshold, "logrank")
        rm = s.value(sc.pattern, sc.threshold, "rmst_diff")
        if not _within(rm, lr, 0.02):
            bad.append(f"{sc.pattern}-{sc.threshold:g} RMST {rm:.4f} vs LR {lr:.4f}")
    assert verdict("C8", not bad, "all orderings hold" if not bad else "violations: " + "; ".join(bad))


def test_c9_type_one_error(verdict):
    eq, thr = null_grids()
    rows = [r for s in (eq, thr) for r in s.rows if r.metric == "rejection_rate"]
    bad = [f"{r.pattern}-{r.threshold:g} {r.method} {r.value:.4f}" for r in rows
           if not 0.021 <= r.value <= 0.029]
    lo, hi = min(r.value for r in rows), max(r.value for r in rows)
    detail = f"{len(rows)} null rates in [{lo:.4f}, {hi:.4f}] (bounds [0.021, 0.029])"
    assert verdict("C9", not bad, detail + ("; off: " + "; ".join(bad) if bad else ""))


def test_c10_tstar_shape(verdict):
    bad, shown = [], []
    for pattern, th in FIG3_CELLS.items():
        curve = [(t, p, se) for t, p, se, _ in tstar_curve(pattern) if t >= th]
        increasing = pattern in ("proportional", "delayed")
        shown.append(f"{pattern}-{th} " + "/".join(f"{p:.3f}" for _, p, _ in curve))
        for (t0, p0, s0), (t1, p1, s1) in zip(curve, curve[1:]):
            slack = 2 * math.hypot(s0, s1)
            step = p1 - p0 if increasing else p0 - p1
            if step < -slack:
                bad.append(f"{pattern} t*={t0:g}->{t1:g} {p0:.4f}->{p1:.4f} (slack {slack:.4f})")
    detail = "; ".join(shown)
    assert verdict("C10", not bad, detail + ("; violations: " + "; ".join(bad) if bad else ""))


ORACLE_TESTS = (
    "tests/test_stattests.py::test_log_rank_hand_example",
    "tests/test_stattests.py::test_fh00_equals_log_rank_bitwise",
    "tests/test_core.py::test_km_equals_empirical_survival_without_censoring",
    "tests/test_stattests.py::test_rmst_variance_matches_brute_force",
    "tests/test_simgen.py::test_samples_match_analytic_survival",
    "tests/test_stattests.py::test_arm_swap_negates",
    "tests/test_effects.py::test_arm_swap_inverts",
    "tests/test_numerics.py::test_quantile_round_trip_grid",
    "tests/test_harness.py::test_reproducible_across_worker_counts",
)


def test_c11_oracle_suites(verdict):
    root = Path(__file__).resolve().parent.parent
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ORACLE_TESTS],
                          cwd=root, capture_output=True, text=True)
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    assert verdict("C11", proc.returncode == 0, f"{len(ORACLE_TESTS)} oracle suites: {last}")


def test_c12_censoring_calibration(verdict):
    design = TrialDesign(analysis_mode="calendar")
    cal = calibrate_dropout(design, ScenarioSpec())
    frac = np.mean([simulate_trial(design, ScenarioSpec(), cal.rate, RngStream(SEED, i)).censoring_fraction
                    for i in range(N_SIMS)])
    ok = _within(frac, 0.22, 0.01)
    detail = (f"calendar-mode censoring {frac:.4f} at dropout rate {cal.rate:.5f} "
              f"(administrative only {cal.admin_only_fraction:.4f}; target 0.22 +/- 0.01)")
    assert verdict("C12", ok, detail)
