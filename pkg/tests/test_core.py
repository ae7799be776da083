import numpy as np
import pytest

from nphtrial.core import (
    TwoArmDataset,
    build_risk_table,
    format_dataset_csv,
    kaplan_meier,
    parse_dataset_csv,
    pooled_left_survival,
)
from nphtrial.errors import DataError

from conftest import random_dataset


def ds(*rows):
    return TwoArmDataset.from_observations(rows)


def test_risk_table_single_event():
    table = build_risk_table(ds((1, True, 0), (2, False, 1)))
    assert table.rows() == [(1.0, 1, 1, 1, 0)]


def test_risk_table_merges_tied_events():
    table = build_risk_table(ds((1, True, 0), (1, True, 1), (3, True, 1)))
    assert table.rows() == [(1.0, 1, 2, 1, 1), (3.0, 0, 1, 0, 1)]


def test_risk_table_errors():
    with pytest.raises(DataError, match="no events"):
        build_risk_table(ds((5, False, 0), (6, False, 1)))
    with pytest.raises(DataError, match="no observations"):
        build_risk_table(ds())


def test_censored_only_time_reduces_risk_set_without_row():
    table = build_risk_table(ds((1, True, 0), (2, False, 0), (3, True, 0), (3, False, 1)))
    assert table.rows() == [(1.0, 3, 1, 1, 0), (3.0, 1, 1, 1, 0)]


def test_event_before_censoring_at_tie():
    # the subject censored at t=2 is still at risk for the event at t=2
    table = build_risk_table(ds((2, True, 0), (2, False, 0)))
    assert table.rows() == [(2.0, 2, 0, 1, 0)]


def test_risk_table_invariants(rng):
    for _ in range(50):
        d = random_dataset(rng, 40)
        t = build_risk_table(d)
        assert np.all(np.diff(t.times) > 0)
        assert np.all(t.d >= 1)
        assert np.all((t.d0 <= t.n0) & (t.d1 <= t.n1))
        assert np.all(np.diff(t.n0) <= 0) and np.all(np.diff(t.n1) <= 0)


def test_risk_table_permutation_invariant(rng):
    for _ in range(20):
        d = random_dataset(rng, 40)
        p = rng.permutation(len(d))
        a, b = build_risk_table(d), build_risk_table(TwoArmDataset(d.time[p], d.event[p], d.arm[p]))
        assert a.rows() == b.rows()


def test_risk_table_arm_swap(rng):
    d = random_dataset(rng, 40)
    a, b = build_risk_table(d), build_risk_table(d.swap_arms())
    assert np.array_equal(a.n0, b.n1) and np.array_equal(a.d0, b.d1)
    assert np.array_equal(a.n1, b.n0) and np.array_equal(a.d1, b.d0)


def test_km_examples():
    c = kaplan_meier([2.0], [True])
    assert c(1.999) == 1.0 and c(2.0) == 0.0
    c = kaplan_meier([1.0, 2.0, 3.0], [False, False, False])
    assert np.all(c([0.5, 2.5, 10.0]) == 1.0)
    c = kaplan_meier([1.0, 2.0, 3.0], [True, False, True])
    assert c(1.0) == pytest.approx(2 / 3)
    assert c(2.9) == pytest.approx(2 / 3)
    assert c(3.0) == 0.0
    with pytest.raises(DataError):
        kaplan_meier([], [])


def test_km_accepts_observation_collection():
    c = kaplan_meier([(1.0, True, 0), (2.0, False, 1), (3.0, True, 1)])
    assert c.times.tolist() == [1.0, 3.0]
    assert c.survival.tolist() == pytest.approx([2 / 3, 0.0])


def test_km_bounded_and_monotone(rng):
    for _ in range(100):
        d = random_dataset(rng, int(rng.integers(1, 60)) + 2, ties=bool(rng.integers(2)))
        c = kaplan_meier(d.time, d.event)
        s = c.survival
        assert np.all((s >= 0) & (s <= 1))
        assert np.all(np.diff(s) <= 0)


def test_km_equals_empirical_survival_without_censoring(rng):
    for _ in range(30):
        t = rng.integers(1, 15, 50).astype(float)
        c = kaplan_meier(t, np.ones(50, bool))
        for x in np.arange(0, 16, 0.5):
            assert c(x) == pytest.approx(np.mean(t > x), abs=1e-12)


def test_pooled_left_survival_examples():
    table = build_risk_table(ds((1, True, 0), (2, True, 0)))
    assert pooled_left_survival(table).tolist() == [1.0, 0.5]
    table = build_risk_table(ds((1, True, 0), (2, True, 1), (3, True, 0), (3, True, 1)))
    left = pooled_left_survival(table)
    assert left[0] == 1.0
    # last row wipes out the risk set; its left limit is the value after row 2
    assert left[-1] == pytest.approx(0.75 * (1 - 1 / 3))


def test_pooled_left_survival_matches_km_left_limit(rng):
    for _ in range(50):
        d = random_dataset(rng, 40)
        table = build_risk_table(d)
        km = kaplan_meier(d.time, d.event)
        assert np.allclose(pooled_left_survival(table), km.left_limit(table.times), atol=1e-14)


def test_dataset_validation():
    with pytest.raises(DataError):
        TwoArmDataset([-1.0], [True], [0])
    with pytest.raises(DataError):
        TwoArmDataset([np.inf], [True], [0])
    with pytest.raises(DataError):
        TwoArmDataset([1.0], [2], [0])
    with pytest.raises(DataError):
        TwoArmDataset([1.0], [1], [3])
    d = TwoArmDataset([1.0], [1], [0])
    with pytest.raises(ValueError):
        d.time[0] = 5.0


def test_csv_round_trip(rng):
    d = random_dataset(rng, 25, ties=False)
    back = parse_dataset_csv(format_dataset_csv(d))
    assert np.array_equal(back.time, d.time)
    assert np.array_equal(back.event, d.event) and np.array_equal(back.arm, d.arm)


@pytest.mark.parametrize("body, line", [
    ("1.0,2,0\n", 2),
    ("1.0,1,0\nabc,1,1\n", 3),
    ("1.0,1,0\n2.0,1\n", 3),
    ("1.0,1,0\n-2.0,1,1\n", 3),
    ("1.0,1,0\n2.0,1,7\n", 3),
])
def test_csv_errors_name_the_line(body, line):
    with pytest.raises(DataError, match=f"line {line}"):
        parse_dataset_csv("time,event,arm\n" + body)


def test_csv_requires_header():
    with pytest.raises(DataError, match="header"):
        parse_dataset_csv("t,e,a\n1,1,0\n")
