"""Monte Carlo engine for power, type-I error and effect-estimate summaries.

Trial ``i`` of every scenario cell draws from ``RngStream(master_seed, i)``,
whatever methods are requested, so adding a method never changes the
simulated data. Per-trial results are stored by trial index, and summaries
are computed from the full index-ordered array, so they do not depend on
the number of workers.
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import CONTROL, EXPERIMENTAL, RiskTable, SurvivalCurve, TwoArmDataset, build_risk_table, pooled_left_survival
from .effects import (
    hazard_ratio_from_table,
    rmst_difference_from_pair,
    rmst_ratio_from_pair,
    weighted_hazard_ratio_from_table,
)
from .errors import ConfigError, NPHError
from .numerics import RngStream
from .simgen import (
    NULL_MODES,
    ScenarioSpec,
    TrialDesign,
    cut_cohort,
    draw_cohort,
    event_driven_time,
    null_scenario,
    trial_from_cohort,
)
from .stattests import (
    FlemingHarringtonParams,
    result_from_statistic,
    log_rank_from_table,
    rmst,
    weighted_log_rank_from_table,
)

__all__ = [
    "RunSpec",
    "SimulationSummary",
    "SummaryRow",
    "DEFAULT_TESTS",
    "DEFAULT_ESTIMATORS",
    "analyze_dataset",
    "run_grid",
    "run_null_equal_threshold",
    "power_vs_events",
    "power_vs_tstar",
    "simulate_cell",
]

DEFAULT_TESTS = ("logrank", "fh(0,1)", "fh(1,1)", "fh(1,0)", "rmst_diff")
DEFAULT_ESTIMATORS = ("hr", "whr(0,1)", "whr(1,1)", "whr(1,0)", "rmst_diff", "rmst_ratio")

_FH = re.compile(r"^(fh|whr)\(\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\)$")


def parse_method(name: str) -> tuple[str, FlemingHarringtonParams | None]:
    """Split a method identifier into its kind and optional FH parameters."""
    name = name.strip()
    m = _FH.match(name)
    if m:
        return m.group(1), FlemingHarringtonParams(float(m.group(2)), float(m.group(3)))
    if name in ("logrank", "rmst_diff", "hr", "rmst_ratio"):
        return name, None
    raise ConfigError(f"unknown method {name!r}")


def _check_methods(tests: Sequence[str], estimators: Sequence[str]) -> None:
    for t in tests:
        kind, _ = parse_method(t)
        if kind not in ("logrank", "fh", "rmst_diff"):
            raise ConfigError(f"{t!r} is not a test")
    for e in estimators:
        kind, _ = parse_method(e)
        if kind not in ("hr", "whr", "rmst_diff", "rmst_ratio"):
            raise ConfigError(f"{e!r} is not an estimator")


def _arm_curve_from_table(table: RiskTable, arm: int, max_time: float) -> SurvivalCurve:
    n = table.n0 if arm == CONTROL else table.n1
    d = table.d0 if arm == CONTROL else table.d1
    keep = d > 0
    times, n, d = table.times[keep], n[keep], d[keep]
    return SurvivalCurve(times, np.cumprod(1.0 - d / n), n, d, max_time)


class _TrialAnalyzer:
    """Compute requested tests and estimators on one dataset, sharing the risk table."""

    def __init__(self, tests: Sequence[str], estimators: Sequence[str], t_star_rule="minimax-observed"):
        _check_methods(tests, estimators)
        self.tests = [(t, *parse_method(t)) for t in tests]
        self.estimators = [(e, *parse_method(e)) for e in estimators]
        self.t_star_rule = t_star_rule
        self.needs_rmst = any(k in ("rmst_diff", "rmst_ratio") for _, k, _ in self.tests + self.estimators)
        # columns: p per test, estimate per estimator, rmst0, rmst1, t*
        self.n_cols = len(self.tests) + len(self.estimators) + 3

    def t_star(self, ds: TwoArmDataset) -> float:
        rule = self.t_star_rule
        if rule in (None, "minimax-observed"):
            return float(min(ds.time[ds.arm == CONTROL].max(), ds.time[ds.arm == EXPERIMENTAL].max()))
        if rule == "minimax-event":
            return float(min(ds.time[(ds.arm == a) & ds.event].max() for a in (CONTROL, EXPERIMENTAL)))
        return float(str(rule).split(":")[-1])

    def __call__(self, ds: TwoArmDataset) -> np.ndarray:
        out = np.full(self.n_cols, np.nan)
        try:
            ds.require_both_arms()
            table = build_risk_table(ds)
        except NPHError:
            return out
        left = pooled_left_survival(table)
        pair = None
        if self.needs_rmst:
            try:
                ts = self.t_star(ds)
                pair = []
                for a in (CONTROL, EXPERIMENTAL):
                    curve = _arm_curve_from_table(table, a, float(ds.time[ds.arm == a].max()))
                    pair.append(rmst(curve, ts))
                out[-3], out[-2], out[-1] = pair[0].mu, pair[1].mu, ts
            except (NPHError, ValueError):
                pair = None
        col = 0
        for _, kind, params in self.tests:
            try:
                if kind == "logrank":
                    res = log_rank_from_table(table)
                elif kind == "fh":
                    res = weighted_log_rank_from_table(table, params, left)
                elif pair is not None:
                    res = result_from_statistic(pair[1].mu - pair[0].mu, pair[0].variance + pair[1].variance, "rmst_diff")
                else:
                    res = None
                if res is not None:
                    out[col] = res.p_one_sided
            except NPHError:
                pass
            col += 1
        for _, kind, params in self.estimators:
            try:
                if kind == "hr":
                    out[col] = hazard_ratio_from_table(table).reported
                elif kind == "whr":
                    out[col] = weighted_hazard_ratio_from_table(table, params, left).reported
                elif pair is not None:
                    fn = rmst_difference_from_pair if kind == "rmst_diff" else rmst_ratio_from_pair
                    out[col] = fn(*pair).reported
            except NPHError:
                pass
            col += 1
        return out


def analyze_dataset(ds: TwoArmDataset, tests=DEFAULT_TESTS, estimators=DEFAULT_ESTIMATORS,
                    t_star_rule="minimax-observed") -> dict[str, float]:
    """Per-dataset numbers as the harness sees them (p-values and natural-scale estimates)."""
    an = _TrialAnalyzer(tests, estimators, t_star_rule)
    row = an(ds)
    keys = [f"p:{t}" for t in tests] + [f"est:{e}" for e in estimators] + ["rmst0", "rmst1", "t_star"]
    return dict(zip(keys, row.tolist()))


@dataclass(frozen=True)
class RunSpec:
    design: TrialDesign = TrialDesign()
    scenarios: tuple[ScenarioSpec, ...] = (ScenarioSpec(),)
    tests: tuple[str, ...] = DEFAULT_TESTS
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    n_sims: int = 10_000
    master_seed: int = 2021
    null_mode: str = "none"
    t_star_rule: str = "minimax-observed"
    dropout_rate: float = 0.0
    summary_stat: str = "mean"
    workers: int = 1

    def validate(self) -> None:
        if self.n_sims < 100:
            raise ConfigError("n_sims must be at least 100")
        if not self.tests:
            raise ConfigError("at least one test is required")
        if self.null_mode not in NULL_MODES:
            raise ConfigError(f"null_mode must be one of {NULL_MODES}")
        if self.summary_stat not in ("mean", "median"):
            raise ConfigError("summary_stat must be 'mean' or 'median'")
        if not self.dropout_rate >= 0:
            raise ConfigError("dropout_rate must be nonnegative")
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        rule = self.t_star_rule
        if rule not in ("minimax-observed", "minimax-event"):
            m = re.fullmatch(r"fixed:([0-9.eE+-]+)", str(rule))
            if not m or not float(m.group(1)) > 0:
                raise ConfigError(f"invalid t* rule {rule!r}")
        _check_methods(self.tests, self.estimators)


@dataclass(frozen=True)
class SummaryRow:
    pattern: str
    threshold: float
    method: str
    metric: str
    value: float
    mc_se: float
    n_used: int
    n_failed: int


SUMMARY_COLUMNS = ("pattern", "threshold", "method", "metric", "value", "mc_se", "n_used", "n_failed")


@dataclass
class SimulationSummary:
    rows: list[SummaryRow] = field(default_factory=list)

    def get(self, pattern: str, threshold: float, method: str, metric: str | None = None) -> SummaryRow:
        for r in self.rows:
            if (r.pattern == pattern and math.isclose(r.threshold, threshold) and r.method == method
                    and (metric is None or r.metric == metric)):
                return r
        raise KeyError((pattern, threshold, method, metric))

    def value(self, pattern, threshold, method, metric=None) -> float:
        return self.get(pattern, threshold, method, metric).value

    def extend(self, other: "SimulationSummary") -> None:
        self.rows.extend(other.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            w.writerow([r.pattern, f"{r.threshold:g}", r.method, r.metric, f"{r.value:.6f}",
                        f"{r.mc_se:.6f}", r.n_used, r.n_failed])
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def _rate_row(pattern, threshold, method, metric, flags: np.ndarray, n_total: int) -> SummaryRow:
    n = int(flags.size)
    p = float(flags.mean()) if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    return SummaryRow(pattern, threshold, method, metric, p, se, n, n_total - n)


def _location_row(pattern, threshold, method, metric, values: np.ndarray, n_total: int,
                  stat: str = "mean") -> SummaryRow:
    v = values[np.isfinite(values)]
    n = int(v.size)
    if n == 0:
        return SummaryRow(pattern, threshold, method, metric, float("nan"), float("nan"), 0, n_total)
    sd = float(v.std(ddof=1)) if n > 1 else 0.0
    se = sd / math.sqrt(n)
    if stat == "median":
        # asymptotic SE of the median under normality
        return SummaryRow(pattern, threshold, method, metric, float(np.median(v)),
                          se * math.sqrt(math.pi / 2), n, n_total - n)
    return SummaryRow(pattern, threshold, method, metric, float(v.mean()), se, n, n_total - n)


def _simulate_chunk(args) -> np.ndarray:
    design, hazards, dropout, seed, t_star_rule, tests, estimators, lo, hi = args
    an = _TrialAnalyzer(tests, estimators, t_star_rule)
    out = np.empty((hi - lo, an.n_cols + 4))
    for k, i in enumerate(range(lo, hi)):
        cohort = draw_cohort(design, hazards, dropout, RngStream(seed, i))
        trial = trial_from_cohort(cohort, design)
        out[k, :an.n_cols] = an(trial.dataset)
        out[k, an.n_cols:] = (trial.analysis_time, trial.events_at_analysis, trial.shortfall,
                              trial.censoring_fraction)
    return out


def _fan_out(fn: Callable, base: tuple, n: int, workers: int) -> np.ndarray:
    if workers <= 1:
        return fn(base + (0, n))
    bounds = np.linspace(0, n, min(n, workers * 4) + 1).astype(int)
    jobs = [base + (int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(fn, jobs))
    return np.concatenate(parts, axis=0)


def simulate_cell(spec: RunSpec, scenario: ScenarioSpec, null_mode: str | None = None) -> np.ndarray:
    """Raw per-trial result matrix for one scenario cell (rows in trial order).

    Columns: one p-value per test, one natural-scale estimate per estimator,
    control RMST, experimental RMST, t*, analysis time, events at analysis,
    shortfall flag, censoring fraction. Failed computations are NaN.
    """
    hazards = null_scenario(scenario, spec.null_mode if null_mode is None else null_mode)
    base = (spec.design, hazards, spec.dropout_rate, spec.master_seed, spec.t_star_rule,
            tuple(spec.tests), tuple(spec.estimators))
    return _fan_out(_simulate_chunk, base, spec.n_sims, spec.workers)


def summarize_cell(spec: RunSpec, scenario: ScenarioSpec, raw: np.ndarray,
                   label: str | None = None) -> SimulationSummary:
    pattern = label or scenario.pattern
    th = scenario.threshold
    n = raw.shape[0]
    alpha = spec.design.alpha_one_sided
    rows = []
    col = 0
    for t in spec.tests:
        p = raw[:, col]
        ok = np.isfinite(p)
        rows.append(_rate_row(pattern, th, t, "rejection_rate", p[ok] <= alpha, n))
        col += 1
    for e in spec.estimators:
        rows.append(_location_row(pattern, th, e, f"{spec.summary_stat}_estimate", raw[:, col], n,
                                  spec.summary_stat))
        col += 1
    rows.append(_location_row(pattern, th, "rmst", "rmst_control", raw[:, col], n, spec.summary_stat))
    rows.append(_location_row(pattern, th, "rmst", "rmst_experimental", raw[:, col + 1], n,
                              spec.summary_stat))
    rows.append(_location_row(pattern, th, "rmst", "t_star", raw[:, col + 2], n))
    col += 3
    rows.append(_location_row(pattern, th, "design", "analysis_time", raw[:, col], n))
    rows.append(_location_row(pattern, th, "design", "events_at_analysis", raw[:, col + 1], n))
    rows.append(_rate_row(pattern, th, "design", "shortfall_rate", raw[:, col + 2] > 0, n))
    rows.append(_location_row(pattern, th, "design", "censoring_fraction", raw[:, col + 3], n))
    return SimulationSummary(rows)


def run_grid(spec: RunSpec) -> SimulationSummary:
    """Simulate every scenario cell of ``spec`` and summarise all methods.

    A rejection is ``p <= alpha``. Trials on which a method fails (degenerate
    variance, non-convergence) are left out of that method's summary and
    counted in ``n_failed``.
    """
    spec.validate()
    summary = SimulationSummary()
    for sc in spec.scenarios:
        raw = simulate_cell(spec, sc)
        summary.extend(summarize_cell(spec, sc, raw))
    return summary


def run_null_equal_threshold(spec: RunSpec, threshold_grid: Sequence[float]) -> SimulationSummary:
    """Type-I error when both arms share the same delayed-effect hazard.

    Rows are labelled with pattern ``equal_threshold``.
    """
    if spec.null_mode != "equal_threshold":
        raise ConfigError("run_null_equal_threshold needs null_mode='equal_threshold'")
    spec.validate()
    summary = SimulationSummary()
    base = spec.scenarios[0] if spec.scenarios else ScenarioSpec()
    for th in threshold_grid:
        sc = replace(base, pattern="delayed", threshold=float(th))
        raw = simulate_cell(spec, sc)
        summary.extend(summarize_cell(spec, sc, raw, label="equal_threshold"))
    return summary


def _events_chunk(args) -> np.ndarray:
    design, hazards, dropout, seed, test, grid, cap, lo, hi = args
    an = _TrialAnalyzer([test], [])
    out = np.full((hi - lo, len(grid)), np.nan)
    for k, i in enumerate(range(lo, hi)):
        cohort = draw_cohort(design, hazards, dropout, RngStream(seed, i))
        for j, target in enumerate(grid):
            at, _ = event_driven_time(cohort, target, cap)
            ds, _ = cut_cohort(cohort, at)
            out[k, j] = an(ds)[0]
    return out


def power_vs_events(design: TrialDesign, scenario: ScenarioSpec, event_grid: Sequence[int],
                    test: str = "logrank", n_sims: int = 10_000, seed: int = 2021,
                    dropout_rate: float = 0.0, workers: int = 1,
                    calendar_cap: bool = False) -> list[tuple[int, float, float]]:
    """Power of ``test`` at event-driven looks after each count in ``event_grid``.

    All grid points analyse the same simulated trials at different cutoffs.
    By default a look waits for its event count however long that takes;
    with ``calendar_cap`` it happens no later than ``max_study_duration``.
    Returns ``(events, power, mc_se)`` triples.
    """
    grid = tuple(int(e) for e in event_grid)
    if any(e < 1 or e > 2 * design.n_per_arm for e in grid):
        raise ConfigError("event grid must lie within [1, 2 * n_per_arm]")
    hazards = null_scenario(scenario, "none")
    cap = design.max_study_duration if calendar_cap else math.inf
    raw = _fan_out(_events_chunk, (design, hazards, dropout_rate, seed, test, grid, cap),
                   n_sims, workers)
    out = []
    for j, e in enumerate(grid):
        p = raw[:, j]
        r = _rate_row("", 0.0, test, "power", p[np.isfinite(p)] <= design.alpha_one_sided, n_sims)
        out.append((e, r.value, r.mc_se))
    return out


def _tstar_chunk(args) -> np.ndarray:
    design, hazards, dropout, seed, grid, lo, hi = args
    out = np.full((hi - lo, 2 * len(grid)), np.nan)
    for k, i in enumerate(range(lo, hi)):
        cohort = draw_cohort(design, hazards, dropout, RngStream(seed, i))
        ds = trial_from_cohort(cohort, design).dataset
        try:
            ds.require_both_arms()
            table = build_risk_table(ds)
        except NPHError:
            continue
        maxes = [float(ds.time[ds.arm == a].max()) for a in (CONTROL, EXPERIMENTAL)]
        curves = [_arm_curve_from_table(table, a, maxes[a]) for a in (CONTROL, EXPERIMENTAL)]
        cap = min(maxes)
        for j, ts in enumerate(grid):
            capped = ts > cap
            ts = min(ts, cap)
            r0, r1 = rmst(curves[0], ts), rmst(curves[1], ts)
            try:
                out[k, j] = result_from_statistic(r1.mu - r0.mu, r0.variance + r1.variance, "rmst_diff").p_one_sided
            except NPHError:
                pass
            out[k, len(grid) + j] = capped
    return out


def power_vs_tstar(design: TrialDesign, scenario: ScenarioSpec, tstar_grid: Sequence[float],
                   n_sims: int = 10_000, seed: int = 2021, dropout_rate: float = 0.0,
                   workers: int = 1) -> list[tuple[float, float, float, int]]:
    """RMST-difference-test power for each truncation time in ``tstar_grid``.

    A t* beyond a trial's minimax observed time is lowered to it; such caps
    are counted. Returns ``(t_star, power, mc_se, n_capped)`` tuples.
    """
    grid = tuple(float(t) for t in tstar_grid)
    if any(not t > 0 for t in grid):
        raise ConfigError("t* values must be positive")
    hazards = null_scenario(scenario, "none")
    raw = _fan_out(_tstar_chunk, (design, hazards, dropout_rate, seed, grid), n_sims, workers)
    out = []
    for j, ts in enumerate(grid):
        p = raw[:, j]
        r = _rate_row("", 0.0, "rmst_diff", "power", p[np.isfinite(p)] <= design.alpha_one_sided, n_sims)
        out.append((ts, r.value, r.mc_se, int(np.nansum(raw[:, len(grid) + j]))))
    return out
