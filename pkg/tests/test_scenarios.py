import math

import pytest

from redsched.graph import NodeKind, Role, validate
from redsched.scenarios import (
    SCENARIOS,
    UnknownScenario,
    burst_arrivals,
    burst_segments,
    generate_scenario,
    list_makespan,
    pipeline_dag,
)
from redsched.timeunits import ms
from redsched.workload import serialize


def only_dag(name, **kw):
    (t,) = generate_scenario(name, **kw).workload.templates
    return t


def test_cruise_is_a_chain():
    g = only_dag("cruise").spec
    assert set(g.nodes) == {"L", "S", "C"}
    assert g.edges == {("L", "S"), ("S", "C")}


def test_obstacle_runs_s_and_o_in_parallel():
    g = only_dag("obstacle").spec
    assert set(g.succs["L"]) == {"S", "O"} and set(g.preds["C"]) == {"S", "O"}


def test_async_pair_periods_and_dependency():
    det, ctrl = generate_scenario("async_pair").workload.templates
    assert det.period == ms(1000 / 33) and ctrl.period == ms(1000 / 30)
    assert abs(det.period - ms(30.30)) < ms(0.01) and abs(ctrl.period - ms(33.33)) < ms(0.01)
    assert ctrl.depends_on == ("det",)


def test_mimo_stages_share_one_encoder():
    g = only_dag("urban").spec
    refs = {a.encoder_ref for a in g.nodes.values() if a.role is Role.SHARED_ENCODER}
    assert refs == {"mimo"}
    assert g.nodes["C"].role is Role.ORDINARY


@pytest.mark.parametrize("mode, factor", [("tight", 1.05), ("loose", 1.5)])
def test_deadline_factors(mode, factor):
    g = pipeline_dag("obstacle", 1.0, 2.0, mode)
    assert g.deadline == math.ceil(list_makespan(g, 2) * factor)


def test_list_makespan_examples():
    g = pipeline_dag("obstacle", 1.0, 2.0, "tight")
    w = {v: a.wcet for v, a in g.nodes.items()}
    assert list_makespan(g, 1) == sum(w.values())
    assert list_makespan(g, 2) == w["L"] + max(w["S"], w["O"]) + w["C"]


def test_scale_multiplies_costs():
    a, b = only_dag("cruise").spec, only_dag("cruise", scale=2.0).spec
    for v in a.nodes:
        assert abs(b.nodes[v].wcet - 2 * a.nodes[v].wcet) <= 1


@pytest.mark.parametrize("name", SCENARIOS)
def test_pure_and_valid(name):
    a, b = generate_scenario(name, seed=9), generate_scenario(name, seed=9)
    assert serialize(a) == serialize(b)
    for t in a.workload.templates:
        validate(t.spec)


def test_seed_changes_interference():
    a, b = generate_scenario("congested", seed=1), generate_scenario("congested", seed=2)
    assert a.workload.interference != b.workload.interference


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        generate_scenario("highway")
    with pytest.raises(ValueError):
        generate_scenario("cruise", deadline="lax")


def test_dynamic_mutation_adds_then_removes():
    muts = generate_scenario("dynamic_mutation").workload.mutations
    assert [type(m.op).__name__ for m in muts] == ["AddNode", "RemoveNode"]
    assert muts[0].at < muts[1].at


def test_burst_segments_spread_evenly():
    assert burst_segments(40, 0) == [False] * 4
    assert burst_segments(40, 100) == [True] * 4
    assert burst_segments(40, 50) == [False, True, False, True]
    assert sum(burst_segments(100, 30)) == 3


def test_burst_arrivals_surge():
    calm = burst_arrivals(60, 20, 0)
    assert calm == [60 * i for i in range(20)]
    hot = burst_arrivals(60, 20, 100, rate=6.0, surge=2)
    assert hot[:13] == [10 * i for i in range(13)]  # two periods at 6x
    assert len(hot) == 20 + 2 * (12 - 2)


def test_inline_percentage():
    assert serialize(generate_scenario("burst(50)", seed=1)) == serialize(generate_scenario("burst", seed=1, pct=50))
    with pytest.raises(ValueError):
        generate_scenario("burst", pct=150)


def test_nonpartitionable_atomic_nodes_are_profiled():
    wf = generate_scenario("nonpartitionable", pct=66.7, seed=0)
    g = wf.workload.templates[0].spec
    atomic = sorted(v for v, a in g.nodes.items() if a.kind is NodeKind.ATOMIC)
    assert atomic == ["L", "S"]
    for v in atomic:
        assert wf.workload.contention.get(v, wf.platform.name) >= 0
    none = generate_scenario("nonpartitionable", pct=0, seed=0).workload.templates[0].spec
    assert not any(a.kind is NodeKind.ATOMIC for a in none.nodes.values())
