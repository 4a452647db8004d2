import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from redsched.graph import DagSpec, NodeAttrs, Role, critical_path_cost, heights, make_dag, validate
from redsched.refinement import (
    MergeUnit,
    NotRefinable,
    SubtaskInstance,
    decoder_id,
    describe_stage,
    dynamic_merge,
    encoder_id,
    lpt_makespan,
    refinable_stages,
    refine,
    refine_all,
    refined_path_cost,
    serialization_margin,
)
from redsched.timeunits import ms

from strategies import all_paths, refinable_dag


def stage(enc, decs, wcet=None, ref="E"):
    return NodeAttrs(
        wcet=wcet or enc + max(decs),
        role=Role.SHARED_ENCODER,
        encoder_ref=ref,
        enc_cost=enc,
        dec_costs=tuple(decs),
    )


def chain_with(middle: NodeAttrs):
    return DagSpec(
        "c",
        {"A": NodeAttrs(wcet=5), "M": middle, "Z": NodeAttrs(wcet=3)},
        frozenset({("A", "M"), ("M", "Z")}),
        100,
    )


def brute_makespan(costs, machines):
    best = None
    for assign in itertools.product(range(machines), repeat=len(costs)):
        loads = [0] * machines
        for c, m in zip(costs, assign):
            loads[m] += c
        best = max(loads) if best is None else min(best, max(loads))
    return best


# --- refine --------------------------------------------------------------------


def test_refine_two_decoders():
    g = refine(chain_with(stage(10, [4, 6])), "M")
    validate(g)
    enc, d0, d1 = encoder_id("M"), decoder_id("M", 0), decoder_id("M", 1)
    assert set(g.nodes) == {"A", enc, d0, d1, "Z"}
    assert g.edges == {("A", enc), (enc, d0), (enc, d1), (d0, "Z"), (d1, "Z")}
    assert g.nodes[enc].wcet == 10 and g.nodes[enc].role is Role.SHARED_ENCODER
    assert [g.nodes[d].role for d in (d0, d1)] == [Role.DECODER, Role.DECODER]
    assert critical_path_cost(g) == 5 + 10 + 6 + 3
    assert refined_path_cost(chain_with(stage(10, [4, 6])), 2) == 5 + 16 + 3


def test_refine_single_decoder_is_chain():
    g = refine(chain_with(stage(7, [2])), "M")
    assert critical_path_cost(g) == 5 + 7 + 2 + 3


def test_refine_rejects_plain_stage():
    with pytest.raises(NotRefinable):
        refine(chain_with(NodeAttrs(wcet=9)), "M")
    with pytest.raises(NotRefinable):
        describe_stage(chain_with(NodeAttrs(wcet=9)), "M")


def test_refine_shifts_downstream_heights():
    g0 = chain_with(stage(10, [4, 6]))
    g1 = refine_all(g0)
    assert heights(g0)["Z"] + 1 == heights(g1)["Z"]
    assert heights(g1)[encoder_id("M")] == heights(g0)["M"]
    assert heights(g1)[decoder_id("M", 0)] == heights(g0)["M"] + 1


def test_refine_all_identity_and_counts():
    plain = make_dag("p", {"A": 1, "B": 2}, [("A", "B")], 10)
    assert refine_all(plain) == plain
    two = DagSpec("t", {"X": stage(3, [1, 2, 2]), "Y": stage(4, [1])}, frozenset(), 10)
    out = refine_all(two)
    # each stage becomes 1 encoder plus q decoders: growth is the sum of q
    assert len(out.nodes) == 2 + (3 + 1)
    assert refinable_stages(out) == []


@given(st.integers(0, 10**6))
def test_refine_all_valid_and_encoders_precede_decoders(seed):
    g = refinable_dag(random.Random(seed))
    out = refine_all(g)
    validate(out)
    for v, a in g.nodes.items():
        if a.refinable:
            rs = describe_stage(g, v)
            assert all((rs.encoder[0], d) in out.edges for d, _ in rs.decoders)
            assert rs.q == len(a.dec_costs)


# --- serialization margin -------------------------------------------------------------


def test_margin_examples():
    assert serialization_margin([4, 6], 2) == 0
    assert serialization_margin([4, 6], 1) == 4
    assert brute_makespan([3, 3, 3], 2) == 6
    assert serialization_margin([3, 3, 3], 2) == 3


@given(st.lists(st.integers(1, 30), min_size=1, max_size=6), st.integers(1, 4))
def test_lpt_against_optimum(costs, m):
    opt = brute_makespan(costs, m)
    lpt = lpt_makespan(costs, m)
    assert opt <= lpt <= Fraction(4, 3) * opt


@given(st.lists(st.integers(1, 30), min_size=1, max_size=6), st.sampled_from([1, 1.5, 2, 3, 4, 8]))
def test_margin_bounds(decs, rho):
    xi = serialization_margin(decs, rho)
    assert 0 <= xi <= sum(decs) - max(decs)
    if rho >= len(decs):
        assert xi == 0
    if rho < 2:
        assert xi == sum(decs) - max(decs)


@given(st.integers(0, 10**6), st.sampled_from([1, 2, 4]))
def test_prop2_margin(seed, rho):
    g = refinable_dag(random.Random(seed))
    margin = sum(serialization_margin(a.dec_costs, rho) for a in g.nodes.values() if a.refinable)
    base = critical_path_cost(g)
    assert critical_path_cost(refine_all(g)) <= base + margin
    assert refined_path_cost(g, rho) <= base + margin
    q_max = max((len(a.dec_costs) for a in g.nodes.values() if a.refinable), default=1)
    if rho >= q_max:
        assert refined_path_cost(g, rho) <= base


def test_refined_path_oracle():
    rng = random.Random(3)
    for _ in range(50):
        g = refinable_dag(rng)
        out = refine_all(g)
        brute = max(sum(out.nodes[v].wcet for v in p) for p in all_paths(out))
        assert critical_path_cost(out) == brute


# --- dynamic merge ---------------------------------------------------------------------


def sub(i, enc, r, d, h=0):
    return SubtaskInstance(i, enc, r, d, h)


def test_merge_within_window():
    units = dynamic_merge([sub("a", "E", 0, ms(50)), sub("b", "E", ms(80), ms(40))], ms(100))
    assert units == [MergeUnit(("a", "b"), "E", ms(40), 1)]


def test_merge_outside_window():
    units = dynamic_merge([sub("a", "E", 0, ms(50)), sub("b", "E", ms(150), ms(40))], ms(100))
    assert sorted(u.members for u in units) == [("a",), ("b",)]
    assert sum(u.encoder_executions for u in units) == 2


def test_merge_needs_same_encoder_and_height():
    units = dynamic_merge([sub("a", "E", 0, 10), sub("b", "F", 0, 10)], ms(100))
    assert len(units) == 2
    units = dynamic_merge([sub("a", "E", 0, 10, 0), sub("b", "E", 0, 10, 1)], ms(100))
    assert len(units) == 2


def test_merge_plain_subtasks_run_no_encoder():
    units = dynamic_merge([sub("x", None, 0, 10), sub("y", None, 0, 10)], ms(100))
    assert all(u.encoder_executions == 0 and len(u.members) == 1 for u in units)


frontier = st.lists(
    st.builds(
        SubtaskInstance,
        id=st.text("abcdef", min_size=1, max_size=4),
        encoder_ref=st.sampled_from([None, "E", "F"]),
        release=st.integers(0, 500),
        subdeadline=st.integers(0, 1000),
        height=st.integers(0, 2),
    ),
    max_size=12,
    unique_by=lambda s: s.id,
)


@given(frontier, st.integers(0, 200))
def test_merge_partitions_frontier(items, gamma):
    units = dynamic_merge(items, gamma)
    by_id = {s.id: s for s in items}
    members = [m for u in units for m in u.members]
    assert sorted(members) == sorted(by_id)
    for u in units:
        group = [by_id[m] for m in u.members]
        assert u.unit_deadline == min(s.subdeadline for s in group)
        assert len({(s.encoder_ref, s.height) for s in group}) == 1
        rel = [s.release for s in group]
        assert max(rel) - min(rel) <= gamma
        if len(group) > 1:
            assert u.shared_encoder is not None and u.shared_encoder == group[0].encoder_ref


@given(frontier, st.integers(0, 200))
def test_merge_never_adds_encoder_runs(items, gamma):
    merged = sum(u.encoder_executions for u in dynamic_merge(items, gamma))
    assert merged <= sum(1 for s in items if s.encoder_ref is not None)
