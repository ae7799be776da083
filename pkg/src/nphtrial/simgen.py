"""Two-arm trial simulation with piecewise-exponential survival.

A trial is generated in two stages: :func:`draw_cohort` produces the latent
quantities for every randomised subject (calendar entry, event time, dropout
time), and :func:`cut_cohort` applies a data cutoff. Keeping the stages apart
lets several analysis times share one cohort.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import TwoArmDataset, format_dataset_csv
from .errors import ConfigError, NumericalError
from .numerics import RngStream, find_root

log = logging.getLogger(__name__)

__all__ = [
    "PiecewiseExponential",
    "ScenarioSpec",
    "TrialDesign",
    "Cohort",
    "SimulatedTrial",
    "DropoutCalibration",
    "PATTERNS",
    "make_scenario",
    "null_scenario",
    "sample_event_time",
    "draw_cohort",
    "cut_cohort",
    "event_driven_time",
    "simulate_trial",
    "calibrate_dropout",
    "export_trial",
]

LN2 = math.log(2.0)

PATTERNS = ("proportional", "delayed", "crossing", "decreasing")


@dataclass(frozen=True)
class PiecewiseExponential:
    """Piecewise-constant hazard.

    ``rates[k]`` applies on ``[cut_points[k-1], cut_points[k])`` with an
    implicit first cut at 0; the last rate extends to infinity.
    """

    cut_points: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cut_points)
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != len(cuts) + 1:
            raise ValueError("need exactly one more rate than cut points")
        if any(r <= 0 for r in rates):
            raise ValueError("rates must be positive")
        if any(c <= 0 for c in cuts) or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be positive and strictly increasing")
        object.__setattr__(self, "cut_points", cuts)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def constant(cls, rate: float) -> "PiecewiseExponential":
        return cls((), (rate,))

    @classmethod
    def with_change(cls, threshold: float, before: float, after: float) -> "PiecewiseExponential":
        """Rate ``before`` on ``[0, threshold)`` and ``after`` from then on."""
        if threshold <= 0 or before == after:
            return cls.constant(after if threshold <= 0 else before)
        return cls((threshold,), (before, after))

    def _knots(self):
        starts = np.concatenate(([0.0], self.cut_points))
        rates = np.asarray(self.rates)
        widths = np.diff(starts)
        h_at_start = np.concatenate(([0.0], np.cumsum(rates[:-1] * widths)))
        return starts, rates, h_at_start

    def cumulative_hazard(self, t):
        starts, rates, h0 = self._knots()
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(starts, t, "right") - 1
        k = np.clip(k, 0, None)
        return h0[k] + rates[k] * (t - starts[k])

    def survival(self, t):
        return np.exp(-self.cumulative_hazard(t))

    def hazard(self, t):
        starts, rates, _ = self._knots()
        k = np.searchsorted(starts, np.asarray(t, float), "right") - 1
        return rates[np.clip(k, 0, None)]

    def sample(self, u) -> np.ndarray:
        """Invert ``S(t) = u`` exactly, interval by interval."""
        starts, rates, h0 = self._knots()
        h = -np.log(np.asarray(u, dtype=float))
        k = np.searchsorted(h0, h, "right") - 1
        return starts[k] + (h - h0[k]) / rates[k]


def sample_event_time(pw: PiecewiseExponential, u: float) -> float:
    if not (0.0 < u < 1.0):
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    return float(pw.sample(u))


_DEFAULT_POST_HR = {"proportional": None, "delayed": None, "crossing": 1.5, "decreasing": 1.0}


@dataclass(frozen=True)
class ScenarioSpec:
    """Hazard pattern of a two-arm comparison.

    ``threshold`` is the time (months) at which the hazard ratio changes.
    ``post_threshold_hr`` defaults to 1.5 for crossing and 1.0 for
    decreasing; it is ignored for the proportional and delayed patterns,
    where the effect after the change is ``full_effect_hr``.
    """

    pattern: str = "proportional"
    threshold: float = 0.0
    control_median: float = 6.0
    full_effect_hr: float = 0.667
    post_threshold_hr: float | None = None

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if not self.threshold >= 0:
            raise ConfigError("threshold must be nonnegative")
        if not (self.control_median > 0 and self.full_effect_hr > 0):
            raise ConfigError("control_median and full_effect_hr must be positive")
        if self.post_threshold_hr is None:
            object.__setattr__(self, "post_threshold_hr", _DEFAULT_POST_HR[self.pattern])
        elif not self.post_threshold_hr > 0:
            raise ConfigError("post_threshold_hr must be positive")

    @property
    def control_rate(self) -> float:
        return LN2 / self.control_median


def make_scenario(spec: ScenarioSpec) -> tuple[PiecewiseExponential, PiecewiseExponential]:
    """Control and experimental hazards for ``spec``.

    The hazard ratio (experimental over control) is:

    * proportional: ``full_effect_hr`` throughout;
    * delayed: 1 before the threshold, ``full_effect_hr`` after;
    * crossing: ``full_effect_hr`` before, ``post_threshold_hr`` after;
    * decreasing: ``full_effect_hr`` before, ``post_threshold_hr`` after.

    In the first three the control hazard is constant and the experimental
    hazard changes. The decreasing pattern models control patients moving to
    the experimental treatment at the threshold: the experimental hazard is
    constant at ``full_effect_hr * lambda0`` and the control hazard drops
    from ``lambda0`` to ``experimental / post_threshold_hr``.
    """
    lam0 = spec.control_rate
    hr = spec.full_effect_hr
    th = spec.threshold
    if spec.pattern == "proportional":
        return PiecewiseExponential.constant(lam0), PiecewiseExponential.constant(hr * lam0)
    if spec.pattern == "delayed":
        exp = PiecewiseExponential.with_change(th, lam0, hr * lam0)
        return PiecewiseExponential.constant(lam0), exp
    if spec.pattern == "crossing":
        exp = PiecewiseExponential.with_change(th, hr * lam0, spec.post_threshold_hr * lam0)
        return PiecewiseExponential.constant(lam0), exp
    lam1 = hr * lam0
    ctrl = PiecewiseExponential.with_change(th, lam0, lam1 / spec.post_threshold_hr)
    return ctrl, PiecewiseExponential.constant(lam1)


NULL_MODES = ("none", "equal_survival", "equal_threshold")


def null_scenario(spec: ScenarioSpec, mode: str) -> tuple[PiecewiseExponential, PiecewiseExponential]:
    """Hazard pair under a null hypothesis.

    ``equal_survival`` gives both arms the scenario's control hazard.
    ``equal_threshold`` gives both arms the delayed-effect experimental
    hazard with the scenario's threshold, so the arms share the same delay.
    """
    if mode == "none":
        return make_scenario(spec)
    if mode == "equal_survival":
        ctrl, _ = make_scenario(spec)
        return ctrl, ctrl
    if mode == "equal_threshold":
        _, exp = make_scenario(replace(spec, pattern="delayed"))
        return exp, exp
    raise ConfigError(f"unknown null mode {mode!r}; expected one of {NULL_MODES}")


ANALYSIS_MODES = ("event_driven", "calendar")


@dataclass(frozen=True)
class TrialDesign:
    n_per_arm: int = 165
    accrual_duration: float = 17.5
    max_study_duration: float = 25.0
    target_events: int = 258
    analysis_mode: str = "event_driven"
    target_censoring: float = 0.22
    alpha_one_sided: float = 0.025

    def __post_init__(self):
        if self.n_per_arm < 1 or self.target_events < 1:
            raise ConfigError("n_per_arm and target_events must be positive")
        if not (0 < self.accrual_duration <= self.max_study_duration):
            raise ConfigError("need 0 < accrual_duration <= max_study_duration")
        if self.target_events > 2 * self.n_per_arm:
            raise ConfigError("target_events cannot exceed the total sample size")
        if self.analysis_mode not in ANALYSIS_MODES:
            raise ConfigError(f"analysis_mode must be one of {ANALYSIS_MODES}")
        if not (0 <= self.target_censoring < 1):
            raise ConfigError("target_censoring must lie in [0, 1)")
        if not (0 < self.alpha_one_sided < 1):
            raise ConfigError("alpha_one_sided must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Cohort:
    """Latent data of every randomised subject (arrays of length ``2 * n_per_arm``)."""

    entry: np.ndarray
    event_time: np.ndarray
    dropout_time: np.ndarray
    arm: np.ndarray

    def event_calendar_times(self) -> np.ndarray:
        """Sorted calendar times of events that precede dropout."""
        seen = self.event_time <= self.dropout_time
        return np.sort(self.entry[seen] + self.event_time[seen])


@dataclass(frozen=True, eq=False)
class SimulatedTrial:
    dataset: TwoArmDataset
    analysis_time: float
    events_at_analysis: int
    shortfall: bool = False
    n_excluded: int = 0

    @property
    def censoring_fraction(self) -> float:
        n = len(self.dataset)
        return 1.0 - self.events_at_analysis / n if n else float("nan")


def draw_cohort(design: TrialDesign, hazards: tuple[PiecewiseExponential, PiecewiseExponential],
                dropout_rate: float, stream: RngStream | np.random.Generator) -> Cohort:
    """Draw entry, event and dropout times for ``2 * n_per_arm`` subjects.

    The first ``n_per_arm`` subjects are control. Draw order is fixed, and
    dropout times are a unit exponential divided by the rate, so the same
    stream yields the same subjects for any dropout rate.
    """
    g = stream.generator() if isinstance(stream, RngStream) else stream
    n = design.n_per_arm
    entry = g.uniform(0.0, design.accrual_duration, 2 * n)
    u = 1.0 - g.random(2 * n)  # (0, 1]
    unit_exp = g.standard_exponential(2 * n)
    event_time = np.concatenate((hazards[0].sample(u[:n]), hazards[1].sample(u[n:])))
    if dropout_rate > 0:
        dropout = unit_exp / dropout_rate
    else:
        dropout = np.full(2 * n, np.inf)
    arm = np.repeat(np.array([0, 1], dtype=np.int8), n)
    return Cohort(entry, event_time, dropout, arm)


def event_driven_time(cohort: Cohort, target_events: int, cap: float) -> tuple[float, bool]:
    """Calendar time of the ``target_events``-th event, capped at ``cap``.

    Returns ``(analysis_time, shortfall)``; ``shortfall`` is set when the
    target is not reached by ``cap``.
    """
    cal = cohort.event_calendar_times()
    if cal.size >= target_events and cal[target_events - 1] <= cap:
        return float(cal[target_events - 1]), False
    return float(cap), True


def cut_cohort(cohort: Cohort, analysis_time: float) -> tuple[TwoArmDataset, int]:
    """Dataset observed at calendar ``analysis_time``.

    Subjects entering at or after the cutoff are dropped. Returns the dataset
    and the number of excluded subjects.
    """
    keep = cohort.entry < analysis_time
    entry = cohort.entry[keep]
    t_ev = cohort.event_time[keep]
    t_do = cohort.dropout_time[keep]
    admin = analysis_time - entry
    obs = np.minimum(np.minimum(t_ev, t_do), admin)
    event = (t_ev <= t_do) & (t_ev <= admin)
    return TwoArmDataset(obs, event, cohort.arm[keep]), int(keep.size - np.count_nonzero(keep))


def trial_from_cohort(cohort: Cohort, design: TrialDesign, mode: str | None = None,
                      target_events: int | None = None) -> SimulatedTrial:
    mode = mode or design.analysis_mode
    if mode == "event_driven":
        target = design.target_events if target_events is None else target_events
        at, short = event_driven_time(cohort, target, design.max_study_duration)
    else:
        at, short = design.max_study_duration, False
    ds, excluded = cut_cohort(cohort, at)
    return SimulatedTrial(ds, at, ds.n_events, short, excluded)


def simulate_trial(design: TrialDesign, scenario: ScenarioSpec | tuple, dropout_rate: float,
                   stream: RngStream, null_mode: str = "none") -> SimulatedTrial:
    """Simulate one trial and cut it per ``design.analysis_mode``.

    ``scenario`` may also be a ready ``(control, experimental)`` hazard pair.
    """
    hazards = scenario if isinstance(scenario, tuple) else null_scenario(scenario, null_mode)
    cohort = draw_cohort(design, hazards, dropout_rate, stream)
    return trial_from_cohort(cohort, design)


@dataclass(frozen=True)
class DropoutCalibration:
    rate: float
    censoring_fraction: float
    admin_only_fraction: float
    below_floor: bool = False


def _pilot_censoring(design: TrialDesign, hazards, rate: float, gen_seed: int,
                     pilot_size: int) -> float:
    pilot = replace(design, n_per_arm=pilot_size // 2, target_events=1)
    cohort = draw_cohort(pilot, hazards, rate, RngStream(gen_seed))
    ds, _ = cut_cohort(cohort, design.max_study_duration)
    return 1.0 - ds.n_events / len(ds)


def calibrate_dropout(design: TrialDesign, scenario: ScenarioSpec, pilot_size: int = 100_000,
                      seed: int = 20200101, tol: float = 1e-4) -> DropoutCalibration:
    """Exponential dropout rate giving ``design.target_censoring`` overall.

    The censoring fraction (dropout plus administrative) is measured on a
    pilot cohort of ``pilot_size`` subjects analysed at
    ``design.max_study_duration``. The pilot reuses one random stream for
    every candidate rate, so the fraction is monotone in the rate and
    bisection applies.
    """
    hazards = make_scenario(scenario)
    admin = _pilot_censoring(design, hazards, 0.0, seed, pilot_size)
    target = design.target_censoring
    if target == 0 or admin >= target:
        if target > 0:
            log.warning("administrative censoring %.4f already meets target %.4f; "
                        "using no dropout", admin, target)
        return DropoutCalibration(0.0, admin, admin, below_floor=target > 0)

    def gap(rate):
        return _pilot_censoring(design, hazards, rate, seed, pilot_size) - target

    hi = 1.0
    while gap(hi) <= 0:
        hi *= 4.0
        if hi > 1e4:
            raise NumericalError(f"cannot bracket dropout rate (administrative-only "
                                 f"censoring {admin:.4f})")
    try:
        rate = find_root(gap, 0.0, hi, tol=tol)
    except NumericalError as exc:
        raise NumericalError(f"{exc} (administrative-only censoring {admin:.4f})") from exc
    return DropoutCalibration(rate, gap(rate) + target, admin)


def export_trial(trial: SimulatedTrial, path: str | os.PathLike, *, seed: int, stream_id: int,
                 scenario: ScenarioSpec, design: TrialDesign, dropout_rate: float) -> str:
    """Write ``trial`` as ``time,event,arm`` CSV plus a ``.json`` metadata sidecar.

    Returns the sidecar path.
    """
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset_csv(trial.dataset))
    meta = {
        "seed": seed,
        "stream_id": stream_id,
        "scenario": asdict(scenario),
        "design": asdict(design),
        "dropout_rate": dropout_rate,
        "analysis_time": trial.analysis_time,
        "events_at_analysis": trial.events_at_analysis,
        "shortfall": trial.shortfall,
    }
    sidecar = os.path.splitext(path)[0] + ".json"
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar
