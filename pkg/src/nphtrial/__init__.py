"""Log-rank, weighted log-rank and RMST methods for two-arm survival trials under
non-proportional hazards, plus a Monte Carlo trial simulator."""

from .core import (
    CONTROL,
    EXPERIMENTAL,
    RiskTable,
    SurvivalCurve,
    SurvivalObservation,
    TwoArmDataset,
    build_risk_table,
    kaplan_meier,
    pooled_left_survival,
    read_dataset_csv,
    write_dataset_csv,
)
from .effects import EffectEstimate, hazard_ratio, rmst_difference, rmst_ratio, weighted_hazard_ratio
from .errors import ConfigError, ConvergenceError, DataError, DegenerateVarianceError, NPHError, NumericalError
from .numerics import RngStream, find_root, integrate_step, relative_efficiency, std_normal_cdf, std_normal_quantile
from .simgen import (
    PiecewiseExponential,
    ScenarioSpec,
    SimulatedTrial,
    TrialDesign,
    calibrate_dropout,
    make_scenario,
    sample_event_time,
    simulate_trial,
)
from .stattests import (
    FlemingHarringtonParams,
    RmstEstimate,
    TestResult,
    fh_weights,
    log_rank,
    minimax_event_time,
    minimax_observed_time,
    rmst,
    rmst_difference_test,
    weighted_log_rank,
)

__all__ = [
    "CONTROL",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DegenerateVarianceError",
    "EXPERIMENTAL",
    "EffectEstimate",
    "FlemingHarringtonParams",
    "NPHError",
    "NumericalError",
    "PiecewiseExponential",
    "RiskTable",
    "RmstEstimate",
    "RngStream",
    "ScenarioSpec",
    "SimulatedTrial",
    "SurvivalCurve",
    "SurvivalObservation",
    "TestResult",
    "TrialDesign",
    "TwoArmDataset",
    "build_risk_table",
    "calibrate_dropout",
    "fh_weights",
    "find_root",
    "hazard_ratio",
    "integrate_step",
    "kaplan_meier",
    "log_rank",
    "make_scenario",
    "minimax_event_time",
    "minimax_observed_time",
    "pooled_left_survival",
    "read_dataset_csv",
    "relative_efficiency",
    "rmst",
    "rmst_difference",
    "rmst_difference_test",
    "rmst_ratio",
    "sample_event_time",
    "simulate_trial",
    "std_normal_cdf",
    "std_normal_quantile",
    "weighted_hazard_ratio",
    "weighted_log_rank",
    "write_dataset_csv",
]

__version__ = "0.1.0"
