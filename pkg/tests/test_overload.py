import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from redsched.overload import (
    BurstConfig,
    DropCandidate,
    HealthSample,
    NonPositiveDeadlineSpan,
    criticality_score,
    detect_overload,
    proactive_drop,
)
from redsched.runtime import ReadyQueue

CFG = BurstConfig()


def samples(us=None, qs=None):
    n = len(us or qs)
    us = us or [0.1] * n
    qs = qs or [0] * n
    return [HealthSample(i, u, q) for i, (u, q) in enumerate(zip(us, qs))]


def test_defaults():
    assert (CFG.theta_u, CFG.q_max, CFG.w) == (0.90, 8, 3)
    for bad in ({"theta_u": 0}, {"theta_u": 1.2}, {"q_max": 0}, {"w": 0}):
        with pytest.raises(ValueError):
            BurstConfig(**bad)


def test_detect_examples():
    assert detect_overload(samples([0.95, 0.95, 0.95]), CFG)
    assert not detect_overload(samples([0.95, 0.80, 0.95]), CFG)
    assert detect_overload(samples(qs=[9, 9, 9]), CFG)
    assert not detect_overload(samples([0.90, 0.90, 0.90]), CFG)  # threshold is strict
    assert not detect_overload(samples(qs=[8, 8, 8]), CFG)
    assert detect_overload(samples([0.95, 0.2, 0.95], [0, 9, 0]), CFG)  # OR per sample
    with pytest.raises(ValueError):
        detect_overload([], CFG)


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 20)), min_size=1, max_size=15), st.integers(1, 5))
def test_detect_matches_window_scan(hist, w):
    cfg = BurstConfig(w=w)
    hs = [HealthSample(i, u, q) for i, (u, q) in enumerate(hist)]
    hot = [u > cfg.theta_u or q > cfg.q_max for u, q in hist]
    expect = any(all(hot[i : i + w]) for i in range(len(hot) - w + 1))
    assert detect_overload(hs, cfg) == expect


def test_criticality_examples():
    assert criticality_score(100, 100) == 0
    assert criticality_score(0, 100) == 1
    assert criticality_score(50, 100) == 0.5
    assert criticality_score(-20, 100) == 1
    assert criticality_score(250, 100) == 0
    with pytest.raises(NonPositiveDeadlineSpan):
        criticality_score(1, 0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(1e-3, 1e6))
def test_criticality_monotone_and_bounded(s1, s2, span):
    a, b = criticality_score(min(s1, s2), span), criticality_score(max(s1, s2), span)
    assert 0 <= b <= a <= 1


def queue_of(units):
    """``units``: (uid, deadline, instance)."""
    return ReadyQueue((d, uid, DropCandidate(inst)) for uid, d, inst in units)


def test_drop_two_lowest_from_ten():
    units = [(f"u{i}", 100 + i, f"i{i}") for i in range(10)]
    scores = {f"u{i}": 0.05 * (i + 1) for i in range(10)}
    q, dropped = proactive_drop(queue_of(units), scores, CFG, HealthSample(0, 0.5, 10))
    assert dropped == ["u0", "u1"]
    assert len(q) == 8


def test_drop_takes_whole_instance():
    units = [("a1", 10, "A"), ("a2", 11, "A"), ("b1", 12, "B")] + [(f"c{i}", 20, f"C{i}") for i in range(7)]
    scores = {"a1": 0.1, "a2": 0.9, "b1": 0.2} | {f"c{i}": 0.5 for i in range(7)}
    q, dropped = proactive_drop(queue_of(units), scores, CFG, HealthSample(0, 0.5, 10))
    # one pick removes both units of instance A and that is enough
    assert dropped == ["a1", "a2"] and len(q) == 8


def test_all_critical_drops_nothing():
    units = [(f"u{i}", i, f"i{i}") for i in range(12)]
    q, dropped = proactive_drop(queue_of(units), {f"u{i}": 1.0 for i in range(12)}, CFG, HealthSample(0, 1.0, 12))
    assert dropped == [] and len(q) == 12


def test_tie_break_largest_slack_then_id():
    units = [("x", 1, "X"), ("y", 1, "Y"), ("z", 1, "Z")] + [(f"k{i}", 1, f"K{i}") for i in range(6)]
    scores = {"x": 0.3, "y": 0.3, "z": 0.3} | {f"k{i}": 0.9 for i in range(6)}
    h = HealthSample(0, 0.5, 9, slack={"x": 5, "y": 9, "z": 9})
    _, dropped = proactive_drop(queue_of(units), scores, CFG, h)
    assert dropped == ["y"]


def test_utilisation_alone_sheds_only_at_the_queue_cap():
    def units(n):
        return [(f"u{i}", i, f"i{i}") for i in range(n)]

    scores = {f"u{i}": 0.1 * (i + 1) for i in range(8)}
    _, dropped = proactive_drop(queue_of(units(4)), scores, CFG, HealthSample(0, 0.99, 4))
    assert dropped == []
    _, dropped = proactive_drop(queue_of(units(8)), scores, CFG, HealthSample(0, 0.99, 8))
    assert dropped == ["u0"]


def test_projected_utilisation_stops_shedding():
    # queued estimates would push the next tick over the threshold
    units = [("a", 1, DropCandidate("A", 5_000_000)), ("b", 2, DropCandidate("B", 5_000_000))]
    q = ReadyQueue((d, uid, c) for uid, d, c in units)
    h = HealthSample(0, 0.5, 2, busy_ns=5_000_000, capacity_ns=10_000_000)
    _, dropped = proactive_drop(q, {"a": 0.1, "b": 0.2}, CFG, h, max_drops=5)
    assert dropped == ["a", "b"]
    h = HealthSample(0, 0.5, 2, busy_ns=0, capacity_ns=10_000_000)
    _, dropped = proactive_drop(q, {"a": 0.1, "b": 0.2}, CFG, h, max_drops=5)
    assert dropped == ["a"]


unit_sets = st.lists(
    st.tuples(st.integers(0, 100), st.sampled_from("ABCDEFGHIJ"), st.sampled_from([0.0, 0.2, 0.5, 0.8, 1.0])),
    min_size=1,
    max_size=20,
)


@given(unit_sets, st.floats(0, 1))
def test_drop_properties(rows, u):
    units = [(f"n{i}", d, inst) for i, (d, inst, _) in enumerate(rows)]
    scores = {f"n{i}": s for i, (_, _, s) in enumerate(rows)}
    queue = queue_of(units)
    q, dropped = proactive_drop(queue, scores, CFG, HealthSample(0, u, len(units)))
    kept = {uid for _, uid, _ in q.entries()}
    assert kept | set(dropped) == {uid for uid, _, _ in units}
    assert not kept & set(dropped)
    assert len(queue) == len(units)  # input untouched
    inst_of = {uid: inst for uid, _, inst in units}
    dropped_inst = {inst_of[d] for d in dropped}
    assert len(dropped_inst) <= max(0, math.ceil(len(units) - CFG.q_max) + 1)
    assert not any(inst_of[k] in dropped_inst for k in kept)
    # picks come before cascade: the lowest dropped pick never beats a kept unit
    picks = [d for d in dropped if scores[d] < 1.0]
    if picks:
        lowest_kept = min((scores[k] for k in kept), default=2.0)
        assert max(min(scores[d] for d in dropped if inst_of[d] == i) for i in dropped_inst) <= lowest_kept
