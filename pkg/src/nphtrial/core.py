"""Two-arm right-censored data, risk tables and Kaplan-Meier curves.

Conventions
-----------
* Arm 0 is control, arm 1 is experimental.
* When an event and a censoring share a time, the censored subject is still
  at risk at that time (events are processed first).
* Times are compared exactly; nearly-equal times are never merged.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError

__all__ = [
    "CONTROL",
    "EXPERIMENTAL",
    "SurvivalObservation",
    "TwoArmDataset",
    "RiskTable",
    "SurvivalCurve",
    "build_risk_table",
    "kaplan_meier",
    "pooled_left_survival",
    "read_dataset_csv",
    "write_dataset_csv",
]

CONTROL = 0
EXPERIMENTAL = 1


class SurvivalObservation(NamedTuple):
    time: float
    event: bool
    arm: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TwoArmDataset:
    """Column-oriented container of ``(time, event, arm)`` observations."""

    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray

    def __post_init__(self):
        time = np.array(self.time, dtype=float)
        event = np.array(self.event)
        arm = np.array(self.arm)
        if not (time.ndim == event.ndim == arm.ndim == 1):
            raise DataError("time, event and arm must be one-dimensional")
        if not (time.size == event.size == arm.size):
            raise DataError("time, event and arm must have equal length")
        if time.size and (not np.all(np.isfinite(time)) or np.any(time < 0)):
            raise DataError("times must be finite and nonnegative")
        if event.dtype != bool:
            if event.size and not np.all((event == 0) | (event == 1)):
                raise DataError("event flags must be 0 or 1")
            event = event.astype(bool)
        if arm.size and not np.all((arm == 0) | (arm == 1)):
            raise DataError("arm labels must be 0 or 1")
        arm = arm.astype(np.int8)
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event))
        object.__setattr__(self, "arm", _frozen(arm))

    @classmethod
    def from_observations(cls, observations: Iterable) -> "TwoArmDataset":
        rows = [SurvivalObservation(*o) for o in observations]
        if not rows:
            return cls(np.empty(0), np.empty(0, bool), np.empty(0, np.int8))
        t, e, a = zip(*rows)
        return cls(np.asarray(t, float), np.asarray(e, bool), np.asarray(a))

    def __len__(self) -> int:
        return int(self.time.size)

    def __iter__(self):
        for t, e, a in zip(self.time.tolist(), self.event.tolist(), self.arm.tolist()):
            yield SurvivalObservation(t, e, a)

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(self.event))

    def arm_size(self, arm: int) -> int:
        return int(np.count_nonzero(self.arm == arm))

    def select(self, arm: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(time, event)`` arrays for one arm."""
        m = self.arm == arm
        return self.time[m], self.event[m]

    def swap_arms(self) -> "TwoArmDataset":
        return TwoArmDataset(self.time, self.event, 1 - self.arm)

    def scale_time(self, factor: float) -> "TwoArmDataset":
        return TwoArmDataset(self.time * factor, self.event, self.arm)

    def require_both_arms(self) -> None:
        if len(self) == 0:
            raise DataError("no observations")
        for arm in (CONTROL, EXPERIMENTAL):
            if not np.any(self.arm == arm):
                raise DataError(f"arm {arm} has no observations")


@dataclass(frozen=True, eq=False)
class RiskTable:
    """Per distinct event time: at-risk and event counts by arm."""

    times: np.ndarray
    n0: np.ndarray
    n1: np.ndarray
    d0: np.ndarray
    d1: np.ndarray

    @property
    def n(self) -> np.ndarray:
        return self.n0 + self.n1

    @property
    def d(self) -> np.ndarray:
        return self.d0 + self.d1

    def __len__(self) -> int:
        return int(self.times.size)

    def rows(self) -> list[tuple[float, int, int, int, int]]:
        return list(zip(self.times.tolist(), self.n0.tolist(), self.n1.tolist(),
                        self.d0.tolist(), self.d1.tolist()))


def _counts_at(sorted_vals: np.ndarray, at: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_vals, at, "right") - np.searchsorted(sorted_vals, at, "left")


def build_risk_table(dataset: TwoArmDataset) -> RiskTable:
    """Risk table over the distinct event times of ``dataset``."""
    if len(dataset) == 0:
        raise DataError("no observations")
    t, e, a = dataset.time, dataset.event, dataset.arm
    ev_times = np.unique(t[e])
    if ev_times.size == 0:
        raise DataError("no events")
    at_risk, events = [], []
    for arm in (CONTROL, EXPERIMENTAL):
        in_arm = a == arm
        t_arm = np.sort(t[in_arm])
        at_risk.append(t_arm.size - np.searchsorted(t_arm, ev_times, "left"))
        events.append(_counts_at(np.sort(t[in_arm & e]), ev_times))
    return RiskTable(ev_times, at_risk[0], at_risk[1], events[0], events[1])


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Right-continuous Kaplan-Meier step function.

    ``survival[j]`` is the value on ``[times[j], times[j+1])``; the curve is 1
    before ``times[0]``. ``max_time`` is the largest observed time (event or
    censored) and bounds the region where the curve is defined.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    max_time: float

    def __call__(self, t):
        idx = np.searchsorted(self.times, t, "right")
        vals = np.concatenate(([1.0], self.survival))
        return vals[idx]

    def left_limit(self, t):
        idx = np.searchsorted(self.times, t, "left")
        vals = np.concatenate(([1.0], self.survival))
        return vals[idx]


def _km_from_counts(times, at_risk, events, max_time) -> SurvivalCurve:
    surv = np.cumprod(1.0 - events / at_risk)
    return SurvivalCurve(times, surv, at_risk, events, float(max_time))


def kaplan_meier(time, event=None) -> SurvivalCurve:
    """Product-limit estimate.

    Accepts either parallel ``time``/``event`` arrays, or a single collection
    of observations (a :class:`TwoArmDataset` or ``(time, event, arm)``
    tuples) whose arms are pooled.
    """
    if event is None:
        ds = time if isinstance(time, TwoArmDataset) else TwoArmDataset.from_observations(time)
        time, event = ds.time, ds.event
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if time.size == 0:
        raise DataError("no observations")
    order = np.sort(time)
    ev_times, d = np.unique(time[event], return_counts=True)
    at_risk = order.size - np.searchsorted(order, ev_times, "left")
    return _km_from_counts(ev_times, at_risk, d, order[-1])


def pooled_left_survival(table: RiskTable) -> np.ndarray:
    """Pooled Kaplan-Meier value just before each event time of ``table``."""
    s = np.cumprod(1.0 - table.d / table.n)
    return np.concatenate(([1.0], s[:-1]))


def read_dataset_csv(path: str | os.PathLike) -> TwoArmDataset:
    """Read a ``time,event,arm`` CSV file.

    Raises :class:`DataError` naming the offending line for malformed rows.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_dataset_csv(fh.read())


def parse_dataset_csv(text: str) -> TwoArmDataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["time", "event", "arm"]:
        raise DataError("line 1: expected header 'time,event,arm'")
    times, events, arms = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataError(f"line {line}: expected 3 fields, got {len(row)}")
        try:
            t = float(row[0])
        except ValueError:
            raise DataError(f"line {line}: time {row[0]!r} is not a number") from None
        if not np.isfinite(t) or t < 0:
            raise DataError(f"line {line}: time must be finite and nonnegative")
        e, a = row[1].strip(), row[2].strip()
        if e not in ("0", "1"):
            raise DataError(f"line {line}: event must be 0 or 1, got {row[1]!r}")
        if a not in ("0", "1"):
            raise DataError(f"line {line}: arm must be 0 or 1, got {row[2]!r}")
        times.append(t)
        events.append(e == "1")
        arms.append(int(a))
    return TwoArmDataset(np.asarray(times, float), np.asarray(events, bool),
                         np.asarray(arms, np.int8))


def format_dataset_csv(dataset: TwoArmDataset) -> str:
    lines = ["time,event,arm"]
    for t, e, a in zip(dataset.time.tolist(), dataset.event.tolist(), dataset.arm.tolist()):
        lines.append(f"{t!r},{int(e)},{a}")
    return "\n".join(lines) + "\n"


def write_dataset_csv(dataset: TwoArmDataset, path: str | os.PathLike) -> None:
    # repr() of a float round-trips exactly.
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset_csv(dataset))
