import dataclasses
import random
import statistics
from collections import Counter

import pytest

from redsched.deadlines import capacity_check, proportional_assign
from redsched.graph import AddEdge, DagSpec, Mutation, NodeAttrs, Role, make_dag
from redsched.metrics import summarize
from redsched.refinement import refine_all
from redsched.scenarios import generate_scenario
from redsched.simulator import (
    ALL_VARIANTS,
    BARRIER,
    DISPATCH,
    DROP,
    FINISH,
    MUTATION,
    OVERLOAD,
    RELEASE,
    REQUEUE,
    DagTemplate,
    ExecModel,
    HorizonExceeded,
    Injection,
    InterferenceWindow,
    PlatformModel,
    SchedulerConfig,
    SchedulerVariant,
    SimTrace,
    Workload,
    active_slowdown,
    run,
    sample_exec,
)
from redsched.timeunits import ms, sec

from strategies import layered_dag, refinable_dag
from tracecheck import max_concurrency, node_times, recorded_precedence_violations, static_precedence_violations

V = SchedulerVariant
CHAIN = make_dag("chain", {"A": sec(20), "B": sec(20), "C": sec(40)}, [("A", "B"), ("B", "C")], sec(120))


def scaled(g: DagSpec, unit: int, deadline: int = 1) -> DagSpec:
    """Multiply every cost in ``g`` by ``unit``."""
    nodes = {
        v: dataclasses.replace(
            a,
            wcet=a.wcet * unit,
            enc_cost=a.enc_cost and a.enc_cost * unit,
            dec_costs=a.dec_costs and tuple(c * unit for c in a.dec_costs),
        )
        for v, a in g.nodes.items()
    }
    return DagSpec(g.id, nodes, g.edges, deadline)


def random_workload(rng: random.Random, n_templates=2):
    templates = []
    for i in range(n_templates):
        base = refinable_dag(rng, max_nodes=8) if rng.random() < 0.5 else layered_dag(rng, max_nodes=10)
        g = scaled(base, ms(1))
        g = DagSpec(f"t{i}", g.nodes, g.edges, ms(rng.randint(100, 400)))
        templates.append(DagTemplate(g, period=ms(rng.randint(40, 200)), count=rng.randint(1, 4), offset=ms(rng.randint(0, 30))))
    wins = ()
    if rng.random() < 0.5:
        wins = (InterferenceWindow(ms(10), ms(120), 1.5),)
    return Workload(tuple(templates), interference=wins)


# --- worked examples -------------------------------------------------------------------


def test_chain_finishes_at_80s():
    t = run(Workload((DagTemplate(CHAIN),)), PlatformModel(rho=1.0), V.EDF)
    fin = {e.node_id: e.time for e in t.of_kind(FINISH)}
    assert fin == {"A": sec(20), "B": sec(40), "C": sec(80)}
    assert fin["C"] <= sec(120)


def test_empty_workload():
    for v in ALL_VARIANTS:
        assert run(Workload(), PlatformModel(), v).events == []


def test_two_independent_nodes_share_two_slots():
    g = make_dag("p", {"X": ms(10), "Y": ms(10)}, [], ms(100))
    t = run(Workload((DagTemplate(g),)), PlatformModel(rho=2.0), V.EDF)
    assert sorted(e.time for e in t.of_kind(FINISH)) == [ms(10), ms(10)]


def test_fractional_slot_runs_slower():
    g = make_dag("p", {"X": ms(10), "Y": ms(10)}, [], ms(100))
    t = run(Workload((DagTemplate(g),)), PlatformModel(rho=1.5), V.EDF)
    assert sorted(e.time for e in t.of_kind(FINISH)) == [ms(10), ms(20)]
    assert PlatformModel(rho=1.5).slot_speeds() == [1.0, 0.5]


# --- execution model -------------------------------------------------------------------


def test_sample_exec_examples():
    rng = random.Random(0)
    det = ExecModel()
    assert sample_exec(100, det, rng) == 100
    assert sample_exec(100, det, rng, slowdown=1.5) == 150
    uni = ExecModel("uniform", alpha=0.7)
    w = 1_000_000
    xs = [sample_exec(w, uni, rng) for _ in range(10_000)]
    assert all(0.7 * w <= x <= w for x in xs)
    assert abs(statistics.fmean(xs) - 0.85 * w) <= 0.02 * 0.85 * w


def test_active_slowdown_multiplies_overlaps():
    wins = [InterferenceWindow(0, 10, 1.5), InterferenceWindow(5, 20, 2.0)]
    assert active_slowdown(wins, 7) == 3.0
    assert active_slowdown(wins, 15) == 2.0
    assert active_slowdown(wins, 20) == 1.0


def test_model_validation():
    with pytest.raises(ValueError):
        PlatformModel(rho=0.5)
    with pytest.raises(ValueError):
        InterferenceWindow(5, 5, 1.2)
    with pytest.raises(ValueError):
        InterferenceWindow(0, 5, 0.9)
    with pytest.raises(ValueError):
        ExecModel("gamma")
    with pytest.raises(ValueError):
        Injection("g", "A", "stall", 5)


# --- mutations ----------------------------------------------------------------------------


def test_mutation_phases_applied_and_reassigned():
    f = generate_scenario("dynamic_mutation", seed=0, count=25)
    for v in (V.RED_IDA, V.RED):
        muts = run(f.workload, f.platform, v, f.scheduler, 0, f.exec_model).of_kind(MUTATION)
        assert [m.node_id for m in muts] == ["AddNode:C", "RemoveNode:C"]
        assert all(m.fields["status"] == "applied" for m in muts)


def test_mutation_reaches_live_instance():
    g = make_dag("m", {"A": ms(20), "B": ms(20)}, [("A", "B")], ms(200))
    add = Mutation(ms(5), AddEdge("A", "B"), "m")  # already present: skipped
    wl = Workload((DagTemplate(g),), mutations=(add,))
    m = run(wl, PlatformModel(), V.RED).of_kind(MUTATION)
    assert m[0].fields["status"] == "skipped"


def test_no_mutations_no_events():
    f = generate_scenario("cruise", seed=0)
    assert run(f.workload, f.platform, V.RED, f.scheduler, 0, f.exec_model).of_kind(MUTATION) == []


def test_cycle_creating_edge_is_skipped():
    g = make_dag("m", {"A": ms(20), "B": ms(20)}, [("A", "B")], ms(200))
    wl = Workload((DagTemplate(g, period=ms(100), count=2),), mutations=(Mutation(ms(50), AddEdge("B", "A"), "m"),))
    t = run(wl, PlatformModel(), V.RED)
    (m,) = t.of_kind(MUTATION)
    assert m.fields["status"] == "skipped" and "reason" in m.fields
    assert len(t.of_kind(FINISH)) == 4


# --- injections and horizon ------------------------------------------------------------


def test_io_wait_holds_the_slot():
    g = make_dag("g", {"A": ms(10), "B": ms(10)}, [("A", "B")], ms(100))
    wl = Workload((DagTemplate(g),), injections=(Injection("g", "A", "io_wait", ms(3)),))
    fin = {e.node_id: e.time for e in run(wl, PlatformModel(), V.RED).of_kind(FINISH)}
    assert fin == {"A": ms(13), "B": ms(23)}


def test_oom_bounce_requeues():
    g = make_dag("g", {"A": ms(10)}, [], ms(100))
    wl = Workload((DagTemplate(g),), injections=(Injection("g", "A", "oom", ms(3)),))
    t = run(wl, PlatformModel(), V.RED)
    kinds = [e.kind for e in t.events if e.kind in (DISPATCH, REQUEUE, FINISH)]
    assert kinds == [DISPATCH, REQUEUE, DISPATCH, FINISH]
    assert t.of_kind(FINISH)[0].time == ms(13)


def test_horizon_exceeded_reports_diagnostics():
    wl = Workload((DagTemplate(CHAIN),))
    with pytest.raises(HorizonExceeded) as exc:
        run(wl, PlatformModel(), V.EDF, SchedulerConfig(horizon=sec(30)))
    assert exc.value.diagnostics["n_active"] == 1


# --- trace format -----------------------------------------------------------------------


def test_trace_round_trip():
    f = generate_scenario("obstacle", seed=2, count=5)
    t = run(f.workload, f.platform, V.RED, f.scheduler, 2, f.exec_model)
    text = t.dumps()
    assert SimTrace.loads(text).dumps() == text
    assert all(len(line.split("\t")) == 5 for line in text.splitlines())
    with pytest.raises(ValueError):
        SimTrace.loads("1\tRelease\n")


# --- invariants over random workloads ---------------------------------------------------


def check_trace(t: SimTrace, slots: int, graphs=None):
    times = [e.time for e in t.events]
    assert times == sorted(times)
    ends = Counter((e.dag_id, e.node_id) for e in t.events if e.kind in (FINISH, DROP))
    assert all(c == 1 for c in ends.values()), "node ended twice"
    for e in t.of_kind(DISPATCH):
        assert (e.dag_id, e.node_id) in ends
    assert recorded_precedence_violations(t) == []
    if graphs:
        assert static_precedence_violations(t, graphs) == []
    assert max_concurrency(t) <= slots


@pytest.mark.parametrize("seed", range(12))
def test_random_workload_invariants(seed):
    rng = random.Random(seed)
    wl = random_workload(rng)
    plat = PlatformModel(rho=rng.choice([1.0, 1.5, 2.0, 3.0]))
    model = ExecModel(rng.choice(["deterministic", "uniform"]))
    for v in ALL_VARIANTS:
        t = run(wl, plat, v, SchedulerConfig(), seed, model)
        graphs = {tm.id: (refine_all(tm.spec) if v.refines else tm.spec) for tm in wl.templates}
        check_trace(t, len(plat.slot_speeds()), graphs)
        released = {e.dag_id: e.fields["template"] for e in t.of_kind(RELEASE)}
        for inst, tid in released.items():
            ended = {n for (d, n) in node_times(t) if d == inst} | {
                e.node_id for e in t.of_kind(DROP) if e.dag_id == inst
            }
            assert ended == set(graphs[tid].nodes)


@pytest.mark.parametrize("name", ["cruise", "urban", "async_pair", "burst", "dynamic_mutation"])
def test_determinism(name):
    f = generate_scenario(name, seed=5)
    for v in (V.EDF, V.RED):
        a = run(f.workload, f.platform, v, f.scheduler, 5, f.exec_model).dumps()
        b = run(f.workload, f.platform, v, f.scheduler, 5, f.exec_model).dumps()
        assert a == b


def test_seed_changes_uniform_samples():
    f = generate_scenario("cruise", seed=0)
    model = ExecModel("uniform")
    a = run(f.workload, f.platform, V.RED, f.scheduler, 0, model).dumps()
    b = run(f.workload, f.platform, V.RED, f.scheduler, 1, model).dumps()
    assert a != b


# --- synchronization ----------------------------------------------------------------------


def test_on_demand_sync_has_no_periodic_barriers():
    f = generate_scenario("cruise", seed=0, count=5)
    red = run(f.workload, f.platform, V.RED, f.scheduler, 0, f.exec_model)
    fg = run(f.workload, f.platform, V.RED_FG, f.scheduler, 0, f.exec_model)
    assert not any(e.fields["kind"] == "Periodic" for e in red.of_kind(BARRIER))
    assert any(e.fields["kind"] == "Periodic" for e in fg.of_kind(BARRIER))


def test_merging_saves_encoder_runs():
    stage = NodeAttrs(wcet=ms(30), role=Role.SHARED_ENCODER, encoder_ref="E", enc_cost=ms(20), dec_costs=(ms(8), ms(10)))
    a = DagSpec("a", {"X": stage}, frozenset(), ms(200))
    b = DagSpec("b", {"Y": stage}, frozenset(), ms(200))
    wl = Workload((DagTemplate(a, period=ms(200), count=4), DagTemplate(b, period=ms(200), count=4)))
    enc = {v: summarize(run(wl, PlatformModel(rho=2.0), v)).encoder_executions for v in (V.EDF, V.RED)}
    assert enc == {V.EDF: 8, V.RED: 4}


# --- sanity floor ----------------------------------------------------------------------------


def graham_deadline(g: DagSpec, rho: float) -> int:
    """Smallest power-of-two deadline at which both the plain and refined
    graphs pass the Graham check."""
    d = 1
    while True:
        gs = [DagSpec(g.id, x.nodes, x.edges, d) for x in (g, refine_all(g))]
        if all(capacity_check(x, proportional_assign(x, d), rho).graham_safe for x in gs):
            return d
        d *= 2


@pytest.mark.parametrize("seed", range(40))
def test_sanity_floor_all_subdeadlines_met(seed):
    rng = random.Random(seed)
    base = refinable_dag(rng, max_nodes=10) if seed % 2 else layered_dag(rng, max_nodes=12)
    # costs on the sync tick, so periodic barriers add no latency
    tick = PlatformModel().tick
    g = scaled(base, tick)
    rho = rng.choice([1.0, 2.0, 3.0])
    d = graham_deadline(g, rho)
    g = DagSpec(g.id, g.nodes, g.edges, d)
    for v in ALL_VARIANTS:
        t = run(Workload((DagTemplate(g),)), PlatformModel(rho=rho), v, SchedulerConfig(), seed)
        sub = proportional_assign(refine_all(g) if v.refines else g, d).node_subdeadlines
        key = {e.node_id: int(e.fields["key"]) for e in t.of_kind(DISPATCH)}
        fin = {e.node_id: e.time for e in t.of_kind(FINISH)}
        if set(fin) != set(sub):
            # only the shedder may cut work short, and only once the
            # ready queue has reached its cap
            shed = [e for e in t.of_kind(OVERLOAD) if e.fields["dropped"] != "0"]
            assert v is V.RED and shed
            assert all(int(e.fields["q"]) >= SchedulerConfig().burst.q_max for e in shed)
        for n, f in fin.items():
            # reassigning variants are held to the deadline in force at dispatch
            assert f <= (key[n] if v.reassigns else sub[n]), (v, n)


# --- overload regression guard -------------------------------------------------------------


@pytest.mark.parametrize("name", ["cruise", "obstacle", "night", "dynamic_mutation", "async_pair"])
def test_quiet_workloads_never_shed(name):
    for seed in range(3):
        f = generate_scenario(name, seed=seed)
        t = run(f.workload, f.platform, V.RED, f.scheduler, seed, f.exec_model)
        assert t.of_kind(DROP) == []
        if f.platform.rho >= 2:
            assert t.of_kind(OVERLOAD) == []


def test_zero_percent_burst_is_quiet():
    f = generate_scenario("burst", seed=0, pct=0)
    t = run(f.workload, f.platform, V.RED, f.scheduler, 0, f.exec_model)
    assert t.of_kind(OVERLOAD) == [] and t.of_kind(DROP) == []


def test_dependent_template_waits_for_upstream_instance():
    f = generate_scenario("async_pair", seed=0)
    for v in ALL_VARIANTS:
        t = go_scenario(f, v)
        ends = {}
        for e in t.events:
            if e.kind in (FINISH, DROP):
                ends[e.dag_id] = e.time
        gated = [e for e in t.of_kind(DISPATCH) if e.fields.get("after")]
        assert gated
        for e in gated:
            assert all(ends[up] <= e.time for up in e.fields["after"].split(","))
        assert recorded_precedence_violations(t) == []


def go_scenario(f, v, seed=0):
    return run(f.workload, f.platform, v, f.scheduler, seed, f.exec_model)
