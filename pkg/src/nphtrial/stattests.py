"""Log-rank, Fleming-Harrington weighted log-rank and RMST-difference tests.

Sign convention: the statistic ``U`` accumulates observed minus expected
events in the control arm, so ``z > 0`` favours the experimental arm and the
one-sided p-value is ``1 - Phi(z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CONTROL,
    EXPERIMENTAL,
    RiskTable,
    SurvivalCurve,
    TwoArmDataset,
    build_risk_table,
    kaplan_meier,
    pooled_left_survival,
)
from .errors import DataError, DegenerateVarianceError
from .numerics import std_normal_cdf

__all__ = [
    "FlemingHarringtonParams",
    "TestResult",
    "RmstEstimate",
    "log_rank",
    "fh_weights",
    "weighted_log_rank",
    "rmst",
    "rmst_difference_test",
    "minimax_observed_time",
    "minimax_event_time",
    "resolve_t_star",
]


@dataclass(frozen=True)
class FlemingHarringtonParams:
    rho: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.rho >= 0 and self.gamma >= 0):
            raise ValueError(f"rho and gamma must be >= 0, got ({self.rho}, {self.gamma})")

    @property
    def label(self) -> str:
        return f"fh({self.rho:g},{self.gamma:g})"


@dataclass(frozen=True)
class TestResult:
    """Outcome of a one-sided two-arm comparison."""

    __test__ = False  # keep pytest from collecting this class

    statistic_u: float
    variance_u: float
    z: float
    p_one_sided: float
    test_id: str


@dataclass(frozen=True)
class RmstEstimate:
    mu: float
    variance: float
    t_star: float
    arm: int | str = "pooled"


def result_from_statistic(u: float, v: float, test_id: str) -> TestResult:
    if not v > 0:
        raise DegenerateVarianceError()
    z = u / math.sqrt(v)
    return TestResult(u, v, z, std_normal_cdf(-z), test_id)


def _hypergeometric_variance(table: RiskTable) -> np.ndarray:
    n = table.n.astype(float)
    d = table.d
    nm1 = n - 1.0
    safe = np.where(nm1 > 0, nm1, 1.0)
    terms = table.n0 * table.n1 * d * (n - d) / (n * n * safe)
    return np.where(nm1 > 0, terms, 0.0)


def weighted_statistic(table: RiskTable, weights: np.ndarray) -> tuple[float, float]:
    """Weighted observed-minus-expected sum and its variance over ``table``."""
    n = table.n.astype(float)
    o_minus_e = table.d0 - table.d * table.n0 / n
    u = float(np.sum(weights * o_minus_e))
    v = float(np.sum(weights * weights * _hypergeometric_variance(table)))
    return u, v


def log_rank_from_table(table: RiskTable) -> TestResult:
    u, v = weighted_statistic(table, np.ones(len(table)))
    return result_from_statistic(u, v, "logrank")


def log_rank(dataset: TwoArmDataset) -> TestResult:
    """Standard (unweighted) log-rank test."""
    dataset.require_both_arms()
    return log_rank_from_table(build_risk_table(dataset))


def fh_weights(pooled_left_surv, params: FlemingHarringtonParams) -> np.ndarray:
    """Fleming-Harrington weights ``s**rho * (1 - s)**gamma`` (``0**0 == 1``)."""
    s = np.asarray(pooled_left_surv, dtype=float)
    # numpy already evaluates 0.0**0.0 as 1.0
    return np.power(s, params.rho) * np.power(1.0 - s, params.gamma)


def weighted_log_rank_from_table(table: RiskTable, params: FlemingHarringtonParams,
                                 left_surv: np.ndarray | None = None) -> TestResult:
    if left_surv is None:
        left_surv = pooled_left_survival(table)
    u, v = weighted_statistic(table, fh_weights(left_surv, params))
    return result_from_statistic(u, v, params.label)


def weighted_log_rank(dataset: TwoArmDataset, params: FlemingHarringtonParams) -> TestResult:
    """Fleming-Harrington G(rho, gamma) weighted log-rank test.

    Weights use the pooled Kaplan-Meier estimate just before each event time.
    """
    dataset.require_both_arms()
    return weighted_log_rank_from_table(build_risk_table(dataset), params)


def rmst(curve: SurvivalCurve, t_star: float) -> RmstEstimate:
    """Restricted mean survival time on ``[0, t_star]`` with its variance.

    The variance is ``sum_i A_i**2 * d_i / (Y_i * (Y_i - d_i))`` over event
    times ``t_i <= t_star``, where ``A_i`` is the area under the curve from
    ``t_i`` to ``t_star``. Rows with ``Y_i == d_i`` contribute zero (the curve
    is zero afterwards, so ``A_i`` is zero as well).
    """
    if not t_star > 0:
        raise ValueError(f"t_star must be positive, got {t_star!r}")
    if t_star > curve.max_time:
        raise DataError(f"t_star beyond data support ({t_star!r} > {curve.max_time!r})")
    k = int(np.searchsorted(curve.times, t_star, "right"))
    times = curve.times[:k]
    knots = np.concatenate(([0.0], times, [t_star]))
    values = np.concatenate(([1.0], curve.survival[:k]))
    seg = values * np.diff(knots)
    mu = float(seg.sum())
    tail = np.cumsum(seg[::-1])[::-1][1:]  # area from times[i] to t_star
    y = curve.at_risk[:k].astype(float)
    d = curve.events[:k]
    denom = y * (y - d)
    terms = np.where(denom > 0, tail * tail * d / np.where(denom > 0, denom, 1.0), 0.0)
    return RmstEstimate(mu, float(terms.sum()), float(t_star))


def arm_curve(dataset: TwoArmDataset, arm: int) -> SurvivalCurve:
    t, e = dataset.select(arm)
    if t.size == 0:
        raise DataError(f"arm {arm} has no observations")
    return kaplan_meier(t, e)


def minimax_observed_time(dataset: TwoArmDataset) -> float:
    """Smaller of the two arms' largest observed (event or censored) times."""
    dataset.require_both_arms()
    return float(min(dataset.time[dataset.arm == a].max() for a in (CONTROL, EXPERIMENTAL)))


def minimax_event_time(dataset: TwoArmDataset) -> float:
    """Smaller of the two arms' largest event times."""
    dataset.require_both_arms()
    maxima = []
    for a in (CONTROL, EXPERIMENTAL):
        t, e = dataset.select(a)
        if not e.any():
            raise DataError(f"no events in arm {a}")
        maxima.append(t[e].max())
    return float(min(maxima))


def resolve_t_star(dataset: TwoArmDataset, rule: str | float | None = None) -> float:
    """Turn a truncation rule into a number.

    ``rule`` is ``None``/``"minimax-observed"``, ``"minimax-event"``,
    ``"fixed:X"`` or a positive number.
    """
    if rule is None or rule == "minimax-observed":
        return minimax_observed_time(dataset)
    if rule == "minimax-event":
        return minimax_event_time(dataset)
    if isinstance(rule, str):
        if not rule.startswith("fixed:"):
            raise ValueError(f"unknown t* rule {rule!r}")
        rule = float(rule[len("fixed:"):])
    return float(rule)


def rmst_pair(dataset: TwoArmDataset, t_star=None) -> tuple[RmstEstimate, RmstEstimate]:
    """Per-arm RMST estimates ``(control, experimental)`` at a common ``t_star``."""
    dataset.require_both_arms()
    ts = resolve_t_star(dataset, t_star)
    out = []
    for a in (CONTROL, EXPERIMENTAL):
        est = rmst(arm_curve(dataset, a), ts)
        out.append(RmstEstimate(est.mu, est.variance, est.t_star, a))
    return out[0], out[1]


def rmst_difference_test(dataset: TwoArmDataset, t_star=None) -> TestResult:
    """Test on the difference of restricted means, experimental minus control.

    ``t_star`` defaults to the minimax observed time.
    """
    r0, r1 = rmst_pair(dataset, t_star)
    return result_from_statistic(r1.mu - r0.mu, r0.variance + r1.variance, "rmst_diff")
