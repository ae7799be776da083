"""Treatment-effect estimates: (weighted) hazard ratio and RMST contrasts.

Every estimate carries a point value on an additive scale (log-HR, months,
log RMST ratio), a standard error, a 95% normal interval on that scale, and a
``reported`` value on the natural scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RiskTable, TwoArmDataset, build_risk_table, pooled_left_survival
from .errors import ConvergenceError, DataError, NumericalError
from .numerics import Z_975
from .stattests import FlemingHarringtonParams, RmstEstimate, fh_weights, rmst_pair

__all__ = [
    "EffectEstimate",
    "hazard_ratio",
    "weighted_hazard_ratio",
    "rmst_difference",
    "rmst_ratio",
    "fit_log_hazard_ratio",
]

LOG_HR = "log_hazard_ratio"
RMST_DIFF = "rmst_difference_months"
LOG_RMST_RATIO = "log_rmst_ratio"


@dataclass(frozen=True)
class EffectEstimate:
    scale: str
    point: float
    std_err: float
    ci_low: float
    ci_high: float
    reported: float
    label: str = ""

    @classmethod
    def on_scale(cls, scale: str, point: float, std_err: float, label: str = "") -> "EffectEstimate":
        half = Z_975 * std_err
        natural = point if scale == RMST_DIFF else math.exp(point)
        return cls(scale, point, std_err, point - half, point + half, natural, label)

    @property
    def reported_ci(self) -> tuple[float, float]:
        if self.scale == RMST_DIFF:
            return self.ci_low, self.ci_high
        return math.exp(self.ci_low), math.exp(self.ci_high)


class _PartialLikelihood:
    """Weighted two-group log partial likelihood (Breslow ties) over a risk table."""

    def __init__(self, table: RiskTable, w: np.ndarray):
        self.n0 = table.n0.astype(float)
        self.n1 = table.n1.astype(float)
        self.wd1 = w * table.d1
        self.wd = w * table.d
        self.sum_wd1 = float(self.wd1.sum())

    def __call__(self, beta: float) -> tuple[float, float, float]:
        """Objective, score and observed information at ``beta``."""
        n1e = self.n1 * math.exp(beta)
        denom = self.n0 + n1e
        frac = n1e / denom
        loglik = self.sum_wd1 * beta - float(self.wd @ np.log(denom))
        score = self.sum_wd1 - float(self.wd @ frac)
        info = float(self.wd @ (frac * (1.0 - frac)))
        return loglik, score, info


def fit_log_hazard_ratio(table: RiskTable, weights: np.ndarray | None = None,
                         max_iter: int = 50, score_tol: float = 1e-8,
                         step_tol: float = 1e-10) -> tuple[float, float]:
    """Maximise the (weighted) two-group partial likelihood.

    Returns ``(beta_hat, observed_information)`` where ``beta`` is the log
    hazard ratio of the experimental arm (coded 1) against control. Damped
    Newton from ``beta = 0``: a step is halved until the objective does not
    decrease.
    """
    w = np.ones(len(table)) if weights is None else np.asarray(weights, float)
    if not np.any(w > 0):
        raise NumericalError("weights vanish")
    d = table.d
    # The score is decreasing in beta; a root exists iff its limits straddle 0.
    up = float(np.sum(w * (table.d1 - d * (table.n1 > 0))))
    down = float(np.sum(w * (table.d1 - d * (table.n0 == 0))))
    if not (down > 0 > up):
        raise NumericalError("monotone likelihood")
    pl = _PartialLikelihood(table, w)
    beta = 0.0
    loglik, score, info = pl(beta)
    for _ in range(max_iter):
        if abs(score) < score_tol:
            break
        if not info > 0:
            raise ConvergenceError("observed information vanished", beta)
        step = max(-5.0, min(5.0, score / info))
        while True:
            cand = beta + step
            c_loglik, c_score, c_info = pl(cand)
            if c_loglik >= loglik - 1e-12 * abs(loglik) or abs(step) < step_tol:
                break
            step *= 0.5
        beta, loglik, score, info = cand, c_loglik, c_score, c_info
        if abs(step) < step_tol:
            break
    else:
        if abs(score) >= score_tol:
            raise ConvergenceError(f"no convergence after {max_iter} iterations", beta)
    if not info > 0:
        raise ConvergenceError("observed information not positive at the estimate", beta)
    return beta, info


def _check_events(dataset: TwoArmDataset) -> None:
    dataset.require_both_arms()
    if dataset.n_events < 2:
        raise DataError("need at least two events")


def hazard_ratio_from_table(table: RiskTable) -> EffectEstimate:
    beta, info = fit_log_hazard_ratio(table)
    return EffectEstimate.on_scale(LOG_HR, beta, 1.0 / math.sqrt(info), "hr")


def hazard_ratio(dataset: TwoArmDataset) -> EffectEstimate:
    """Experimental-vs-control hazard ratio from the Cox partial likelihood."""
    _check_events(dataset)
    return hazard_ratio_from_table(build_risk_table(dataset))


def weighted_hazard_ratio_from_table(table: RiskTable, params: FlemingHarringtonParams,
                                     left_surv: np.ndarray | None = None) -> EffectEstimate:
    if left_surv is None:
        left_surv = pooled_left_survival(table)
    w = fh_weights(left_surv, params)
    beta, info = fit_log_hazard_ratio(table, w)
    return EffectEstimate.on_scale(LOG_HR, beta, 1.0 / math.sqrt(info),
                                   "whr" + params.label[2:])


def weighted_hazard_ratio(dataset: TwoArmDataset, params: FlemingHarringtonParams) -> EffectEstimate:
    """Hazard ratio from the partial likelihood with Fleming-Harrington weights.

    Each event time's contribution to score and information is multiplied by
    its weight; weights are computed once from the pooled curve and held
    fixed during the iterations.
    """
    _check_events(dataset)
    return weighted_hazard_ratio_from_table(build_risk_table(dataset), params)


def rmst_difference_from_pair(r0: RmstEstimate, r1: RmstEstimate) -> EffectEstimate:
    return EffectEstimate.on_scale(RMST_DIFF, r1.mu - r0.mu,
                                   math.sqrt(r0.variance + r1.variance), "rmst_diff")


def rmst_ratio_from_pair(r0: RmstEstimate, r1: RmstEstimate) -> EffectEstimate:
    if not (r0.mu > 0 and r1.mu > 0):
        raise NumericalError("zero RMST")
    se = math.sqrt(r0.variance / r0.mu**2 + r1.variance / r1.mu**2)
    return EffectEstimate.on_scale(LOG_RMST_RATIO, math.log(r0.mu / r1.mu), se, "rmst_ratio")


def rmst_difference(dataset: TwoArmDataset, t_star=None) -> EffectEstimate:
    """RMST difference (experimental minus control) in months."""
    return rmst_difference_from_pair(*rmst_pair(dataset, t_star))


def rmst_ratio(dataset: TwoArmDataset, t_star=None) -> EffectEstimate:
    """Control-over-experimental RMST ratio; below 1 favours experimental.

    Standard error of the log ratio by the delta method.
    """
    return rmst_ratio_from_pair(*rmst_pair(dataset, t_star))
