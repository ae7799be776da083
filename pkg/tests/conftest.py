import numpy as np
import pytest

from nphtrial.core import TwoArmDataset


def random_dataset(rng: np.random.Generator, n: int = 30, ties: bool = True,
                   censor_p: float = 0.3) -> TwoArmDataset:
    """Small random two-arm dataset; integer times when ``ties`` so collisions occur."""
    while True:
        if ties:
            t = rng.integers(1, 12, n).astype(float)
        else:
            t = rng.exponential(5.0, n)
        e = rng.random(n) > censor_p
        a = rng.integers(0, 2, n)
        if a.min() == 0 and a.max() == 1 and e.sum() >= 2:
            return TwoArmDataset(t, e, a)


def mirrored(ds: TwoArmDataset) -> TwoArmDataset:
    """Every observation duplicated into both arms."""
    t = np.concatenate((ds.time, ds.time))
    e = np.concatenate((ds.event, ds.event))
    a = np.repeat([0, 1], len(ds))
    return TwoArmDataset(t, e, a)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
