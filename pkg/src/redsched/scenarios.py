"""Synthetic robotic-inference workloads.

Stage costs follow the FLOP ratios of the four perception models (lane
detection L, segmentation S, control C, object detection O) at 10 ms per
GFLOP, multiplied by ``scale``. L, S and O are MIMONet stages that share
one encoder (``mimo``); C is an ordinary node.

Every generator is a pure function of ``(name, scale, seed, options)``.
"""

from __future__ import annotations

import heapq
import math
import random
import re
from dataclasses import replace
from typing import Optional

from .deadlines import ContentionTable, profile_contention
from .graph import AddNode, DagSpec, Mutation, NodeAttrs, NodeKind, RemoveNode, Role, heights
from .simulator import DagTemplate, ExecModel, InterferenceWindow, PlatformModel, SchedulerConfig, Workload
from .timeunits import ms
from .workload import WorkloadFile

STAGE_MS = {"L": 41.11, "S": 26.55, "C": 4.65, "O": 2.83}
STAGE_MEM = {"L": 3329.0, "S": 3359.0, "C": 3680.0, "O": 3593.0}
MIMO_STAGES = {"L", "S", "O"}
ENCODER = "mimo"
ENC_FRACTION = 0.6

PIPELINES = {
    "cruise": (["L", "S", "C"], [("L", "S"), ("S", "C")]),
    "obstacle": (["L", "S", "O", "C"], [("L", "S"), ("L", "O"), ("S", "C"), ("O", "C")]),
    "urban": (
        ["L", "O1", "S", "O2", "C"],
        [("L", "S"), ("L", "O2"), ("O1", "S"), ("O1", "O2"), ("S", "C"), ("O2", "C")],
    ),
    "emergency": (["O", "L", "S", "C"], [("O", "L"), ("O", "S"), ("L", "C"), ("S", "C")]),
    "night": (["C1", "C2", "C3"], [("C1", "C2"), ("C2", "C3")]),
}

SCENARIOS = (
    "cruise",
    "obstacle",
    "urban",
    "emergency",
    "night",
    "dynamic_mutation",
    "async_pair",
    "burst",
    "nonpartitionable",
    "congested",
)


class UnknownScenario(ValueError):
    pass


def _stage_kind(node: str) -> str:
    return node.rstrip("0123456789")


def stage_attrs(stage: str, scale: float = 1.0, atomic: bool = False) -> NodeAttrs:
    wcet = ms(STAGE_MS[stage] * scale)
    mem = STAGE_MEM[stage]
    if atomic:
        return NodeAttrs(wcet=wcet, mem=mem, kind=NodeKind.ATOMIC)
    if stage in MIMO_STAGES:
        enc = int(wcet * ENC_FRACTION)
        return NodeAttrs(
            wcet=wcet,
            mem=mem,
            role=Role.SHARED_ENCODER,
            encoder_ref=ENCODER,
            enc_cost=enc,
            dec_costs=(wcet - enc,),
        )
    return NodeAttrs(wcet=wcet, mem=mem)


def list_makespan(dag: DagSpec, slots: int) -> int:
    """Non-preemptive list schedule of one instance on ``slots`` machines,
    longest remaining path first."""
    succs, preds = dag.succs, dag.preds
    tail: dict[str, int] = {}
    for v in sorted(dag.nodes, key=lambda v: -heights(dag)[v]):
        tail[v] = dag.nodes[v].wcet + max((tail[w] for w in succs[v]), default=0)
    remaining = {v: len(preds[v]) for v in dag.nodes}
    ready = [(-tail[v], v) for v in dag.nodes if not preds[v]]
    heapq.heapify(ready)
    running: list[tuple[int, str]] = []
    now = 0
    while ready or running:
        while ready and len(running) < slots:
            _, v = heapq.heappop(ready)
            heapq.heappush(running, (now + dag.nodes[v].wcet, v))
        now, v = heapq.heappop(running)
        for w in succs[v]:
            remaining[w] -= 1
            if remaining[w] == 0:
                heapq.heappush(ready, (-tail[w], w))
    return now


def _deadline(dag: DagSpec, rho: float, mode: str) -> int:
    factor = {"tight": 1.05, "loose": 1.5}.get(mode)
    if factor is None:
        raise ValueError(f"deadline mode must be 'tight' or 'loose', got {mode!r}")
    return int(math.ceil(list_makespan(dag, max(1, math.floor(rho))) * factor))


def pipeline_dag(name: str, scale: float, rho: float, deadline: str, atomic: frozenset = frozenset()) -> DagSpec:
    nodes, edges = PIPELINES[name]
    attrs = {v: stage_attrs(_stage_kind(v), scale, v in atomic) for v in nodes}
    draft = DagSpec(name, attrs, frozenset(edges), deadline=1)
    return replace(draft, deadline=_deadline(draft, rho, deadline))


def interference_windows(rng: random.Random, start: int, end: int) -> tuple[InterferenceWindow, ...]:
    """Alternating calm and interfered stretches with slowdown 1.2 to 1.6."""
    out = []
    t = start + ms(rng.uniform(0, 100))
    while t < end:
        length = ms(rng.uniform(50, 200))
        out.append(InterferenceWindow(t, t + length, round(rng.uniform(1.2, 1.6), 3)))
        t += length + ms(rng.uniform(100, 400))
    return tuple(out)


def _period(dag: DagSpec, rho: float, load: float) -> int:
    work = sum(a.wcet for a in dag.nodes.values())
    return int(round(work / (rho * load)))


def _file(wl: Workload, platform: PlatformModel, seed: int, sched: Optional[SchedulerConfig] = None, **kw) -> WorkloadFile:
    return WorkloadFile(
        platform=platform,
        exec_model=ExecModel("uniform", 0.7, seed),
        scheduler=sched or SchedulerConfig(),
        workload=wl,
        **kw,
    )


def pipeline_scenario(
    name: str,
    scale: float = 1.0,
    seed: int = 0,
    deadline: str = "tight",
    *,
    rho: float = 2.0,
    load: float = 0.5,
    count: int = 40,
    interference: bool = False,
) -> WorkloadFile:
    rng = random.Random(f"{name}:{seed}")
    dag = pipeline_dag(name, scale, rho, deadline)
    period = _period(dag, rho, load)
    tmpl = DagTemplate(dag, period=period, count=count)
    windows = interference_windows(rng, 0, count * period) if interference else ()
    return _file(Workload((tmpl,), interference=windows), PlatformModel(rho=rho), seed)


def congested(scale: float = 1.0, seed: int = 0, deadline: str = "tight", *, count: int = 40) -> WorkloadFile:
    """Urban pipeline near saturation under interference."""
    return pipeline_scenario("urban", scale, seed, deadline, load=0.9, count=count, interference=True)


def dynamic_mutation(scale: float = 1.0, seed: int = 0, deadline: str = "loose", *, count: int = 30) -> WorkloadFile:
    """A two-stage DAG that gains a middle stage C at instance 10 (A keeps
    its direct edge to B) and loses it again at instance 20."""
    unit = 4.0 * scale
    a = NodeAttrs(wcet=ms(5 * unit), mem=STAGE_MEM["L"])
    b = NodeAttrs(wcet=ms(5 * unit), mem=STAGE_MEM["C"])
    c = NodeAttrs(wcet=ms(3 * unit), mem=STAGE_MEM["O"])
    full = DagSpec("dyn", {"A": a, "C": c, "B": b}, frozenset({("A", "C"), ("C", "B"), ("A", "B")}), 1)
    d = _deadline(full, 1, deadline)
    dag = DagSpec("dyn", {"A": a, "B": b}, frozenset({("A", "B")}), d)
    period = int(d * 1.2)
    muts = (
        Mutation(10 * period, AddNode("C", c, ("A",), ("B",)), "dyn"),
        Mutation(20 * period, RemoveNode("C"), "dyn"),
    )
    tmpl = DagTemplate(dag, period=period, count=count)
    return _file(Workload((tmpl,), mutations=muts), PlatformModel(rho=1.0), seed)


def async_pair(scale: float = 1.0, seed: int = 0, deadline: str = "tight", *, count: int = 30) -> WorkloadFile:
    """Control at 30 Hz consuming the latest output of detection at 33 Hz."""
    ctrl = DagSpec("ctrl", {"ctrl": NodeAttrs(wcet=ms(3 * STAGE_MS["C"] * scale), mem=STAGE_MEM["C"])}, frozenset(), ms(30))
    det = DagSpec("det", {"O": stage_attrs("O", 3 * scale)}, frozenset(), ms(30))
    templates = (
        DagTemplate(det, period=ms(1000 / 33), count=count),
        DagTemplate(ctrl, period=ms(1000 / 30), count=count, depends_on=("det",)),
    )
    return _file(Workload(templates), PlatformModel(rho=1.0), seed)


def burst_segments(count: int, pct: float, segment: int = 10) -> list[bool]:
    """Which ``segment``-period stretches open with a surge, spread evenly so
    that ``pct`` percent of them do."""
    n = -(-count // segment)
    p = pct / 100.0
    return [math.floor((k + 1) * p + 1e-9) > math.floor(k * p + 1e-9) for k in range(n)]


def burst_arrivals(period: int, count: int, pct: float, rate: float = 6.0, segment: int = 10, surge: int = 2) -> list[int]:
    """Release times over ``count`` base periods. A bursting segment starts
    with ``surge`` base periods released ``rate`` times faster; the rest of
    every segment runs at the base rate."""
    end = count * period
    seg = segment * period
    hot = surge * period
    flags = burst_segments(count, pct, segment)
    out, t = [], 0
    while t < end:
        out.append(t)
        k = t // seg
        in_burst = flags[k] and (t - k * seg) < hot
        t += int(round(period / rate)) if in_burst else period
    return out


def burst_windows(period: int, count: int, pct: float, slowdown: float, segment: int = 10, surge: int = 2) -> tuple[InterferenceWindow, ...]:
    """Background kernel activity over each surge."""
    if slowdown == 1.0:
        return ()
    seg = segment * period
    flags = burst_segments(count, pct, segment)
    return tuple(InterferenceWindow(k * seg, k * seg + surge * period, slowdown) for k, f in enumerate(flags) if f)


def burst(pct: float = 100.0, scale: float = 1.0, seed: int = 0, deadline: str = "tight", *, count: int = 40,
          shedding: bool = True, rate: float = 6.0, slowdown: float = 1.3, surge: int = 2) -> WorkloadFile:
    """Cruise with overload phases opening ``pct`` percent of the
    ten-period segments: for ``surge`` periods sensor surges multiply the
    release rate by ``rate`` while background kernels slow execution by
    ``slowdown``."""
    if not 0 <= pct <= 100:
        raise ValueError("burst percentage must lie in [0, 100]")
    rho = 2.0
    dag = pipeline_dag("cruise", scale, rho, deadline)
    period = _period(dag, rho, 0.5)
    arrivals = burst_arrivals(period, count, pct, rate, surge=surge)
    windows = burst_windows(period, count, pct, slowdown, surge=surge)
    horizon = 2 * arrivals[-1] + 10 * dag.deadline
    sched = SchedulerConfig(shedding=shedding, horizon=horizon)
    tmpl = DagTemplate(dag, arrivals=tuple(arrivals))
    return _file(Workload((tmpl,), interference=windows), PlatformModel(rho=rho), seed, sched)


def nonpartitionable(pct: float = 100.0, scale: float = 1.0, seed: int = 0, deadline: str = "tight", *,
                     count: int = 40, mem_contention: float = 0.5, interference: bool = True) -> WorkloadFile:
    """Cruise with the heaviest ``round(pct/100 * 3)`` stages atomic.

    Atomic deadlines use a contention table profiled in the simulator
    against two overlapping instances of the pipeline, under the
    strongest interference window of the scenario.
    """
    if not 0 <= pct <= 100:
        raise ValueError("atomic percentage must lie in [0, 100]")
    rho = 2.0
    n_atomic = int(round(pct / 100 * 3))
    chosen = frozenset(sorted(PIPELINES["cruise"][0], key=lambda v: -STAGE_MS[v])[:n_atomic])
    dag = pipeline_dag("cruise", scale, rho, deadline, chosen)
    period = _period(dag, rho, 0.5)
    platform = PlatformModel(rho=rho, mem_contention=mem_contention)
    rng = random.Random(f"nonpartitionable:{seed}")
    windows = interference_windows(rng, 0, count * period) if interference else ()
    table = {}
    if chosen:
        twins = [dag.with_arrival(0, id="cruise_a"), dag.with_arrival(0, id="cruise_b")]
        for v in sorted(chosen):
            delta = profile_contention(v, twins, platform, [seed], dag_id="cruise_a", interference=windows)
            table[(v, platform.name)] = delta
    tmpl = DagTemplate(dag, period=period, count=count)
    wl = Workload((tmpl,), interference=windows, contention=ContentionTable(table))
    return _file(wl, platform, seed)


_PARAM = re.compile(r"^(\w+)\(([-+0-9.eE]+)%?\)$")


def generate_scenario(name: str, scale: float = 1.0, seed: int = 0, deadline: Optional[str] = None, **options) -> WorkloadFile:
    """Build a named scenario. ``burst`` and ``nonpartitionable`` take a
    percentage, either as ``pct=`` or inline, e.g. ``burst(50)``."""
    m = _PARAM.match(name)
    if m:
        name, options["pct"] = m.group(1), float(m.group(2))
    if scale <= 0:
        raise ValueError("scale must be positive")
    kw = dict(options)
    if deadline is not None:
        kw["deadline"] = deadline
    if name in PIPELINES:
        return pipeline_scenario(name, scale, seed, **kw)
    builders = {
        "congested": congested,
        "dynamic_mutation": dynamic_mutation,
        "async_pair": async_pair,
    }
    if name in builders:
        return builders[name](scale, seed, **kw)
    if name == "burst":
        return burst(kw.pop("pct", 100.0), scale, seed, **kw)
    if name == "nonpartitionable":
        return nonpartitionable(kw.pop("pct", 100.0), scale, seed, **kw)
    raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
