"""Command-line entry point: ``analyze``, ``simulate``, ``reproduce`` and ``selftest``.

Exit codes: 0 success, 1 failed self-test, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from dataclasses import asdict, replace
from typing import Callable

import yaml

from . import __version__
from .core import TwoArmDataset, read_dataset_csv
from .effects import hazard_ratio, rmst_difference, rmst_ratio, weighted_hazard_ratio
from .errors import ConfigError, DataError, NPHError, NumericalError
from .harness import (
    DEFAULT_ESTIMATORS,
    DEFAULT_TESTS,
    RunSpec,
    SimulationSummary,
    parse_method,
    power_vs_events,
    power_vs_tstar,
    run_grid,
    run_null_equal_threshold,
    simulate_cell,
    summarize_cell,
)
from .numerics import relative_efficiency, std_normal_cdf, std_normal_quantile
from .simgen import PATTERNS, ScenarioSpec, TrialDesign, calibrate_dropout, null_scenario
from .stattests import log_rank, rmst_pair, rmst_difference_test, weighted_log_rank

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

DEFAULT_GRID = {
    "delayed": [0, 1, 2, 3, 4],
    "crossing": [0, 3, 6, 9, 12],
    "decreasing": [0, 2, 4, 6, 8, 10],
}

# Every accepted config key with its default. Missing keys take these values.
DEFAULT_CONFIG = {
    "n_per_arm": 165,
    "accrual_duration": 17.5,
    "max_study_duration": 25.0,
    "target_events": 258,
    "analysis_mode": "event",
    "target_censoring": 0.22,
    "alpha_one_sided": 0.025,
    "control_median": 6.0,
    "full_effect_hr": 0.667,
    "crossing_post_hr": 1.5,
    "decreasing_post_hr": 1.0,
    "grid": DEFAULT_GRID,
    "tests": list(DEFAULT_TESTS),
    "estimators": list(DEFAULT_ESTIMATORS),
    "n_sims": 10_000,
    "seed": 2021,
    "null_mode": "none",
    "tstar_rule": "minimax-observed",
    "summary_stat": "mean",
    "workers": 1,
    "dropout_rate": None,  # None: calibrate to target_censoring
    "pilot_size": 100_000,
    "calibration_seed": 20200101,
    "out": "results",
}

_MODE_ALIASES = {"event": "event_driven", "event_driven": "event_driven", "calendar": "calendar"}
_TSTAR = re.compile(r"^(minimax-observed|minimax-event|fixed:[0-9.eE+-]+)$")


def _check_tstar_rule(rule: str) -> str:
    if not _TSTAR.match(str(rule)):
        raise ConfigError(f"tstar_rule: invalid value {rule!r}")
    if rule.startswith("fixed:") and not float(rule[6:]) > 0:
        raise ConfigError("tstar_rule: fixed t* must be positive")
    return rule


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Read a YAML mapping, reject unknown keys and fill in defaults."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a key-value mapping")
    unknown = sorted(set(raw) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    cfg = {**DEFAULT_CONFIG, **raw}
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return _normalise(cfg)


def _normalise(cfg: dict) -> dict:
    mode = cfg["analysis_mode"]
    if mode not in _MODE_ALIASES:
        raise ConfigError(f"analysis_mode: expected 'event' or 'calendar', got {mode!r}")
    cfg["analysis_mode"] = "event" if _MODE_ALIASES[mode] == "event_driven" else "calendar"
    _check_tstar_rule(cfg["tstar_rule"])
    grid = cfg["grid"]
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid: expected a mapping of pattern to threshold list")
    for pattern, ths in grid.items():
        if pattern not in PATTERNS:
            raise ConfigError(f"grid: unknown pattern {pattern!r}")
        if not isinstance(ths, list) or not all(isinstance(t, (int, float)) for t in ths):
            raise ConfigError(f"grid.{pattern}: expected a list of numbers")
    for key in ("tests", "estimators"):
        if not isinstance(cfg[key], list):
            raise ConfigError(f"{key}: expected a list")
        cfg[key] = [str(m) for m in cfg[key]]
    for key in ("n_per_arm", "target_events", "n_sims", "seed", "workers", "pilot_size",
                "calibration_seed"):
        if isinstance(cfg[key], bool) or not isinstance(cfg[key], int):
            raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}")
    if cfg["workers"] < 1:
        raise ConfigError("workers: must be at least 1")
    return cfg


def _real(cfg: dict, key: str) -> float:
    try:
        return float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from None


def design_from_config(cfg: dict) -> TrialDesign:
    return TrialDesign(
        n_per_arm=cfg["n_per_arm"],
        accrual_duration=_real(cfg, "accrual_duration"),
        max_study_duration=_real(cfg, "max_study_duration"),
        target_events=cfg["target_events"],
        analysis_mode=_MODE_ALIASES[cfg["analysis_mode"]],
        target_censoring=_real(cfg, "target_censoring"),
        alpha_one_sided=_real(cfg, "alpha_one_sided"),
    )


def scenario(cfg: dict, pattern: str, threshold: float) -> ScenarioSpec:
    post = {"crossing": "crossing_post_hr", "decreasing": "decreasing_post_hr"}.get(pattern)
    return ScenarioSpec(pattern, float(threshold), _real(cfg, "control_median"),
                        _real(cfg, "full_effect_hr"), None if post is None else _real(cfg, post))


def scenarios_from_config(cfg: dict) -> tuple[ScenarioSpec, ...]:
    return tuple(scenario(cfg, p, th) for p, ths in cfg["grid"].items() for th in ths)


def _dropout(cfg: dict, design: TrialDesign) -> tuple[float, dict]:
    if cfg["dropout_rate"] is not None:
        rate = _real(cfg, "dropout_rate")
        if not rate >= 0:
            raise ConfigError("dropout_rate must be nonnegative")
        return rate, {"source": "config", "rate": rate}
    cal = calibrate_dropout(replace(design, analysis_mode="calendar"), scenario(cfg, "proportional", 0),
                            pilot_size=cfg["pilot_size"], seed=cfg["calibration_seed"])
    return cal.rate, {"source": "calibrated", **asdict(cal)}


def run_spec(cfg: dict, design: TrialDesign, dropout: float, **changes) -> RunSpec:
    spec = RunSpec(design=design, scenarios=scenarios_from_config(cfg), tests=tuple(cfg["tests"]),
                   estimators=tuple(cfg["estimators"]), n_sims=cfg["n_sims"],
                   master_seed=cfg["seed"], null_mode=cfg["null_mode"],
                   t_star_rule=cfg["tstar_rule"], dropout_rate=dropout,
                   summary_stat=cfg["summary_stat"], workers=cfg["workers"])
    spec = replace(spec, **changes)
    spec.validate()
    return spec


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_metadata(out_dir: str, name: str, record: dict) -> str:
    path = os.path.join(out_dir, name)
    _write(path, json.dumps({**record, "version": __version__}, indent=2, sort_keys=True) + "\n")
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


# ---------------------------------------------------------------- analyze

def analyze_report(ds, tests, estimators, t_star_rule) -> list[tuple[str, str, str, str]]:
    """Long-format rows ``(kind, method, quantity, value)`` for one dataset."""
    rows: list[tuple[str, str, str, str]] = []
    r0, r1 = rmst_pair(ds, t_star_rule)
    rows.append(("rmst", "t_star", "value", _fmt(r0.t_star)))
    for name, r in (("control", r0), ("experimental", r1)):
        rows.append(("rmst", name, "mu", _fmt(r.mu)))
        rows.append(("rmst", name, "std_err", _fmt(math.sqrt(r.variance))))

    def attempt(kind: str, method: str, fn: Callable):
        try:
            return fn()
        except (NumericalError, DataError) as exc:
            rows.append((kind, method, "error", str(exc)))
            return None

    for t in tests:
        k, params = parse_method(t)
        fn = {"logrank": lambda: log_rank(ds),
              "fh": lambda: weighted_log_rank(ds, params),
              "rmst_diff": lambda: rmst_difference_test(ds, r0.t_star)}[k]
        res = attempt("test", t, fn)
        if res is not None:
            for q in ("statistic_u", "variance_u", "z", "p_one_sided"):
                rows.append(("test", t, q, _fmt(getattr(res, q))))
    for e in estimators:
        k, params = parse_method(e)
        fn = {"hr": lambda: hazard_ratio(ds),
              "whr": lambda: weighted_hazard_ratio(ds, params),
              "rmst_diff": lambda: rmst_difference(ds, r0.t_star),
              "rmst_ratio": lambda: rmst_ratio(ds, r0.t_star)}[k]
        est = attempt("estimate", e, fn)
        if est is not None:
            lo, hi = est.reported_ci
            for q, v in (("scale", est.scale), ("point", est.point), ("std_err", est.std_err),
                         ("reported", est.reported), ("ci_low", lo), ("ci_high", hi)):
                rows.append(("estimate", e, q, _fmt(v)))
    return rows


def cmd_analyze(args) -> int:
    overrides = {"tstar_rule": args.tstar_rule}
    cfg = load_config(args.config, overrides)
    tests = args.tests.split(";") if args.tests else cfg["tests"]
    estimators = args.estimators.split(";") if args.estimators else cfg["estimators"]
    RunSpec(tests=tuple(tests), estimators=tuple(estimators)).validate()
    try:
        ds = read_dataset_csv(args.dataset)
    except OSError as exc:
        raise DataError(f"cannot read {args.dataset!r}: {exc.strerror}") from exc
    ds.require_both_arms()
    text = _csv_text(("kind", "method", "quantity", "value"),
                     analyze_report(ds, tests, estimators, cfg["tstar_rule"]))
    sys.stdout.write(text)
    if args.out:
        _write(os.path.join(args.out, "analysis.csv"), text)
        _write_metadata(args.out, "analysis.json", {
            "command": "analyze", "dataset": os.path.abspath(args.dataset), "tests": tests,
            "estimators": estimators, "tstar_rule": cfg["tstar_rule"]})
    return EXIT_OK


# --------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _common_overrides(args))
    design = design_from_config(cfg)
    dropout, dropout_info = _dropout(cfg, design)
    out = cfg["out"]
    if cfg["null_mode"] == "equal_threshold":
        spec = run_spec(cfg, design, dropout, scenarios=(scenario(cfg, "delayed", 0),))
        ths = sorted({float(t) for ths in cfg["grid"].values() for t in ths})
        summary = run_null_equal_threshold(spec, ths)
    else:
        summary = run_grid(run_spec(cfg, design, dropout))
    _write(os.path.join(out, "summary.csv"), summary.to_csv())
    failures = [(r.pattern, f"{r.threshold:g}", r.method, r.n_failed) for r in summary.rows
                if r.metric == "rejection_rate" or r.metric.endswith("_estimate")]
    _write(os.path.join(out, "failures.csv"),
           _csv_text(("pattern", "threshold", "method", "n_failed"), failures))
    _write_metadata(out, "metadata.json", {"command": "simulate", "config": cfg,
                                           "seed": cfg["seed"], "dropout": dropout_info})
    print(f"wrote {len(summary.rows)} summary rows to {os.path.join(out, 'summary.csv')}")
    return EXIT_OK


# -------------------------------------------------------------- reproduce

FIG3_THRESHOLDS = {"proportional": 0, "delayed": 4, "crossing": 9, "decreasing": 9}
FIG3_TSTAR = [2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22]
FIG1_EVENTS = [50, 75, 100, 125, 150, 175, 200, 225, 250, 258, 275, 300, 325]
TABLE_PATTERN = {"table1": "delayed", "table2": "crossing", "table3": "decreasing",
                 "fig5": "delayed", "fig6": "crossing", "fig7": "decreasing"}


def _summary_cell(spec: RunSpec, sc: ScenarioSpec, null_mode: str, cache: dict, label=None):
    key = null_scenario(sc, null_mode)
    if key not in cache:
        cache[key] = simulate_cell(spec, sc, null_mode)
    return summarize_cell(spec, sc, cache[key], label)


def _reproduce_grid(cfg, design, dropout, pattern) -> SimulationSummary:
    spec = run_spec(cfg, design, dropout)
    summary = SimulationSummary()
    for th in cfg["grid"].get(pattern, DEFAULT_GRID[pattern]):
        summary.extend(_summary_cell(spec, scenario(cfg, pattern, th), "none", {}))
    return summary


def _table(summary: SimulationSummary, pattern: str, ths) -> str:
    header = ["quantity"] + [f"{t:g}" for t in ths]
    ctrl = [summary.value(pattern, t, "rmst", "rmst_control") for t in ths]
    exp = [summary.value(pattern, t, "rmst", "rmst_experimental") for t in ths]
    diff = [summary.value(pattern, t, "rmst_diff", f"{summary_stat(summary)}_estimate") for t in ths]
    rows = [["rmst_control"] + [_fmt(v) for v in ctrl],
            ["rmst_experimental"] + [_fmt(v) for v in exp],
            ["difference"] + [_fmt(v) for v in diff]]
    return _csv_text(header, rows)


def summary_stat(summary: SimulationSummary) -> str:
    metric = next(r.metric for r in summary.rows if r.metric.endswith("_estimate"))
    return metric.split("_")[0]


def reproduce(target: str, cfg: dict) -> str:
    """CSV text for one reproduction target."""
    if target == "releff":
        value = relative_efficiency(0.90, 0.67, cfg["alpha_one_sided"])
        return _csv_text(("power_reference", "power_alternative", "alpha_one_sided", "relative_efficiency"),
                         [("0.90", "0.67", _fmt(float(cfg["alpha_one_sided"])), f"{value:.4f}")])
    design = design_from_config(cfg)
    dropout, _ = _dropout(cfg, design)
    n, seed, workers = cfg["n_sims"], cfg["seed"], cfg["workers"]
    if target == "fig1":
        rows = []
        for sc in (scenario(cfg, "proportional", 0), scenario(cfg, "delayed", 2)):
            for e, p, se in power_vs_events(design, sc, FIG1_EVENTS, "logrank", n, seed, dropout, workers):
                rows.append((sc.pattern, f"{sc.threshold:g}", e, _fmt(p), _fmt(se)))
        return _csv_text(("pattern", "threshold", "events", "power", "mc_se"), rows)
    if target == "fig3":
        rows = []
        for pattern, th in FIG3_THRESHOLDS.items():
            sc = scenario(cfg, pattern, th)
            for ts, p, se, capped in power_vs_tstar(design, sc, FIG3_TSTAR, n, seed, dropout, workers):
                rows.append((pattern, f"{th:g}", f"{ts:g}", _fmt(p), _fmt(se), capped))
        return _csv_text(("pattern", "threshold", "t_star", "power", "mc_se", "n_capped"), rows)
    if target in ("fig5", "fig6", "fig7"):
        return _reproduce_grid(cfg, design, dropout, TABLE_PATTERN[target]).to_csv()
    if target in ("table1", "table2", "table3"):
        pattern = TABLE_PATTERN[target]
        ths = [float(t) for t in cfg["grid"].get(pattern, DEFAULT_GRID[pattern])]
        cfg = {**cfg, "tests": ["logrank"], "estimators": ["rmst_diff"]}
        return _table(_reproduce_grid(cfg, design, dropout, pattern), pattern, ths)
    if target == "fig8":
        spec = run_spec(cfg, design, dropout, null_mode="equal_survival", estimators=())
        summary, cache = SimulationSummary(), {}
        for sc in spec.scenarios:
            summary.extend(_summary_cell(spec, sc, "equal_survival", cache))
        return _rejection_csv(summary)
    if target == "fig10":
        spec = run_spec(cfg, design, dropout, null_mode="equal_threshold", estimators=())
        return _rejection_csv(run_null_equal_threshold(spec, DEFAULT_GRID["delayed"]))
    raise ConfigError(f"unknown reproduce target {target!r}")


def _rejection_csv(summary: SimulationSummary) -> str:
    return SimulationSummary([r for r in summary.rows if r.metric == "rejection_rate"]).to_csv()


REPRODUCE_TARGETS = ("fig1", "fig3", "fig5", "fig6", "fig7", "fig8", "fig10",
                     "table1", "table2", "table3", "releff")


def cmd_reproduce(args) -> int:
    overrides = _common_overrides(args)
    overrides["n_sims"] = args.n_sims
    cfg = load_config(args.config, overrides)
    text = reproduce(args.target, cfg)
    sys.stdout.write(text)
    out = cfg["out"]
    _write(os.path.join(out, f"{args.target}.csv"), text)
    _write_metadata(out, f"{args.target}.json", {"command": "reproduce", "target": args.target,
                                                 "config": cfg, "seed": cfg["seed"]})
    return EXIT_OK


# --------------------------------------------------------------- selftest

PAPER_CONSTANTS = {
    "n_per_arm": 165, "accrual_duration": 17.5, "max_study_duration": 25.0, "target_events": 258,
    "target_censoring": 0.22, "alpha_one_sided": 0.025, "control_median": 6.0,
    "full_effect_hr": 0.667, "crossing_post_hr": 1.5, "decreasing_post_hr": 1.0, "n_sims": 10_000,
}


def selftest_checks() -> list[tuple[str, bool]]:
    cfg = load_config(None)
    checks = [("default config equals the design constants",
               all(cfg[k] == v for k, v in PAPER_CONSTANTS.items()))]
    checks.append(("relative efficiency 1.82",
                   abs(relative_efficiency(0.90, 0.67, 0.025) - 1.82) <= 0.005))
    r = log_rank(TwoArmDataset([1.0, 2.0], [True, False], [0, 1]))
    checks.append(("log-rank hand example U=0.5 V=0.25 Z=1",
                   (r.statistic_u, r.variance_u, r.z) == (0.5, 0.25, 1.0)))
    grid = [i / 1000 for i in range(1, 1000)]
    checks.append(("normal quantile round trip 1e-9",
                   max(abs(std_normal_cdf(std_normal_quantile(p)) - p) for p in grid) < 1e-9))
    return checks


def cmd_selftest(args) -> int:
    ok = True
    for name, passed in selftest_checks():
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return EXIT_OK if ok else EXIT_SELFTEST


# ------------------------------------------------------------------- main

def _common_overrides(args) -> dict:
    return {"seed": args.seed, "workers": args.workers, "out": args.out,
            "tstar_rule": args.tstar_rule, "analysis_mode": args.analysis_mode}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nphtrial", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=_u64, metavar="U64")
    common.add_argument("--workers", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--tstar-rule", metavar="RULE",
                        help="minimax-observed, minimax-event or fixed:X")
    common.add_argument("--analysis-mode", choices=("event", "calendar"))

    a = sub.add_parser("analyze", parents=[common], help="analyse a time,event,arm CSV file")
    a.add_argument("dataset")
    a.add_argument("--tests", help="semicolon-separated test ids, e.g. 'logrank;fh(0,1)'")
    a.add_argument("--estimators", help="semicolon-separated estimator ids")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario grid from a config")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reproduce", parents=[common], help="emit a figure or table grid as CSV")
    r.add_argument("target", choices=REPRODUCE_TARGETS)
    r.add_argument("--n-sims", type=int, metavar="N")
    r.set_defaults(func=cmd_reproduce)

    t = sub.add_parser("selftest", help="quick built-in consistency checks")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NPHError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
