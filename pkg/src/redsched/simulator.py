"""Deterministic discrete-event simulation of the scheduler variants.

The engine advances an integer-nanosecond clock through a heap of events
ordered by ``(time, priority, sequence)``. After all events at one instant
are handled, a dispatch cycle fills free slots by EDF; monitor ticks then
sample system health and, for the full variant, shed work.

Per-variant behaviour:

=========  ==========  ==============  ========  ==============  =====  =====
variant    refinement  deadlines       reassign  sync            merge  burst
=========  ==========  ==============  ========  ==============  =====  =====
EDF        no          end-to-end      no        periodic        no     no
RED-FG     yes         proportional    no        periodic        no     no
RED-IDA    yes         proportional    yes       periodic        no     no
RED        yes         proportional    yes       on-demand       yes    yes
=========  ==========  ==============  ========  ==============  =====  =====
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Iterable, Optional, Sequence

from .deadlines import (
    BudgetExhausted,
    ContentionTable,
    DeadlineError,
    NoProfile,
    atomic_deadline,
    proportional_assign,
    reassign_residual,
)
from .graph import (
    AddNode,
    DagSpec,
    GraphError,
    Mutation,
    MutationBreaksInvariant,
    NodeKind,
    Role,
    apply_mutation,
    heights,
    validate,
)
from .overload import BurstConfig, HealthSample, criticality_score, detect_overload, is_hot, proactive_drop
from .refinement import SubtaskInstance, dynamic_merge, refine_all
from .runtime import (
    BarrierKind,
    CostEstimator,
    HandlerState,
    HEvent,
    HState,
    ReadyQueue,
    SyncState,
    batch_same_height,
    edf_select,
    emit_barriers,
    fsm_step,
)
from .timeunits import ms


class InvalidWorkload(ValueError):
    pass


class HorizonExceeded(RuntimeError):
    def __init__(self, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"simulation horizon exceeded: {diagnostics}")


class SchedulerVariant(str, Enum):
    EDF = "EDF"
    RED_FG = "RED-FG"
    RED_IDA = "RED-IDA"
    RED = "RED"

    @classmethod
    def parse(cls, text: str) -> "SchedulerVariant":
        key = text.strip().upper().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown scheduler variant {text!r}")

    @property
    def refines(self) -> bool:
        return self is not SchedulerVariant.EDF

    @property
    def proportional(self) -> bool:
        return self is not SchedulerVariant.EDF

    @property
    def reassigns(self) -> bool:
        return self in (SchedulerVariant.RED_IDA, SchedulerVariant.RED)

    @property
    def on_demand(self) -> bool:
        return self is SchedulerVariant.RED

    @property
    def merges(self) -> bool:
        return self is SchedulerVariant.RED

    @property
    def monitors(self) -> bool:
        return self is SchedulerVariant.RED


ALL_VARIANTS = tuple(SchedulerVariant)


@dataclass(frozen=True)
class PlatformModel:
    """Execution resource: ``floor(rho)`` unit-speed slots plus one slot of
    speed ``rho - floor(rho)`` when ``rho`` is fractional.

    ``mem_contention`` scales a co-runner slowdown of
    ``1 + mem_contention * (co-running memory) / mem_capacity``; zero
    disables memory contention.
    """

    rho: float = 1.0
    tick: int = ms(5)
    name: str = "sim"
    mem_capacity: float = 32768.0
    mem_contention: float = 0.0

    def __post_init__(self):
        if not self.rho >= 1:
            raise ValueError("rho must be >= 1")
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if self.mem_capacity <= 0:
            raise ValueError("mem_capacity must be positive")
        if self.mem_contention < 0:
            raise ValueError("mem_contention must be >= 0")

    def slot_speeds(self) -> list[float]:
        if math.isinf(self.rho):
            raise ValueError("simulation needs a finite rho")
        whole = math.floor(self.rho)
        speeds = [1.0] * whole
        frac = self.rho - whole
        if frac > 1e-12:
            speeds.append(frac)
        return speeds


@dataclass(frozen=True)
class InterferenceWindow:
    start: int
    end: int
    slowdown: float

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("interference window needs start < end")
        if self.slowdown < 1:
            raise ValueError("slowdown must be >= 1")

    def active(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class ExecModel:
    distribution: str = "deterministic"
    alpha: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in ("deterministic", "uniform"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")


def active_slowdown(windows: Iterable[InterferenceWindow], t: int) -> float:
    out = 1.0
    for w in windows:
        if w.active(t):
            out *= w.slowdown
    return out


def sample_exec(wcet: int, model: ExecModel, rng: random.Random, slowdown: float = 1.0) -> int:
    """One execution-time draw in ns, scaled by the active slowdown."""
    if model.distribution == "deterministic":
        base = float(wcet)
    else:
        base = rng.uniform(model.alpha * wcet, wcet)
    return max(1, int(round(base * slowdown)))


@dataclass(frozen=True)
class SchedulerConfig:
    gamma: int = ms(100)
    k: int = 8
    burst: BurstConfig = field(default_factory=BurstConfig)
    barrier_overhead: int = 0
    sync_interval: Optional[int] = None
    shedding: bool = True
    horizon: Optional[int] = None

    def __post_init__(self):
        if self.gamma < 0 or self.k < 1 or self.barrier_overhead < 0:
            raise ValueError("inconsistent scheduler config")
        if self.sync_interval is not None and self.sync_interval <= 0:
            raise ValueError("sync_interval must be positive")


@dataclass(frozen=True)
class DagTemplate:
    """A DAG released periodically (``period``/``count``/``offset``) or at
    explicit ``arrivals``. Sources of an instance wait for the most recent
    already-released instance of every template named in ``depends_on``."""

    spec: DagSpec
    period: Optional[int] = None
    count: int = 1
    offset: int = 0
    arrivals: Optional[tuple[int, ...]] = None
    depends_on: tuple[str, ...] = ()

    def __post_init__(self):
        if self.arrivals is not None:
            object.__setattr__(self, "arrivals", tuple(sorted(self.arrivals)))
        object.__setattr__(self, "depends_on", tuple(self.depends_on))
        if self.period is not None and self.period <= 0:
            raise ValueError("period must be positive")
        if self.count < 0 or self.offset < 0:
            raise ValueError("count and offset must be >= 0")

    @property
    def id(self) -> str:
        return self.spec.id

    def arrival_times(self) -> list[int]:
        if self.arrivals is not None:
            return list(self.arrivals)
        if self.period is None:
            return [self.offset] * min(self.count, 1)
        return [self.offset + i * self.period for i in range(self.count)]


@dataclass(frozen=True)
class Injection:
    """Forces an I/O wait or an OOM bounce on a node (``instance`` None
    means every instance of the template)."""

    dag: str
    node: str
    kind: str
    dwell: int
    instance: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("io_wait", "oom"):
            raise ValueError(f"unknown injection kind {self.kind!r}")
        if self.dwell <= 0:
            raise ValueError("dwell must be positive")


@dataclass(frozen=True)
class Workload:
    templates: tuple[DagTemplate, ...] = ()
    mutations: tuple[Mutation, ...] = ()
    interference: tuple[InterferenceWindow, ...] = ()
    contention: Optional[ContentionTable] = None
    injections: tuple[Injection, ...] = ()

    def __post_init__(self):
        for name in ("templates", "mutations", "interference", "injections"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


# --- trace -----------------------------------------------------------------

RELEASE = "Release"
DISPATCH = "Dispatch"
FINISH = "Finish"
BARRIER = "Barrier"
DROP = "Drop"
MUTATION = "Mutation"
OVERLOAD = "OverloadDetected"
REQUEUE = "Requeue"


def format_extra(pairs: Iterable[tuple[str, object]]) -> str:
    return ";".join(f"{k}={v}" for k, v in pairs)


def parse_extra(extra: str) -> dict[str, str]:
    out = {}
    if not extra:
        return out
    for part in extra.split(";"):
        k, _, v = part.partition("=")
        out[k] = v
    return out


@dataclass(frozen=True)
class TraceEvent:
    time: int
    kind: str
    dag_id: str = "-"
    node_id: str = "-"
    extra: str = ""

    @property
    def fields(self) -> dict[str, str]:
        return parse_extra(self.extra)

    def line(self) -> str:
        return f"{self.time}\t{self.kind}\t{self.dag_id}\t{self.node_id}\t{self.extra}"


@dataclass
class SimTrace:
    events: list[TraceEvent] = field(default_factory=list)
    variant: Optional[str] = None
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def dumps(self) -> str:
        return "".join(e.line() + "\n" for e in self.events)

    @classmethod
    def loads(cls, text: str) -> "SimTrace":
        events = []
        for n, raw in enumerate(text.splitlines(), 1):
            if not raw:
                continue
            parts = raw.split("\t")
            if len(parts) != 5:
                raise ValueError(f"trace line {n}: expected 5 tab-separated fields")
            events.append(TraceEvent(int(parts[0]), parts[1], parts[2], parts[3], parts[4]))
        return cls(events)


# --- engine ----------------------------------------------------------------

# event priorities at equal timestamps
_P_FINISH, _P_IO_END, _P_RECLAIM, _P_READY, _P_MUTATION, _P_RELEASE, _P_SYNC, _P_MONITOR = range(8)

_WAITING, _PENDING, _READY, _RUNNING, _DONE, _DROPPED, _OOM = (
    "waiting",
    "pending",
    "ready",
    "running",
    "done",
    "dropped",
    "oom",
)
_NOT_STARTED = (_WAITING, _PENDING, _READY, _OOM)


@dataclass
class _Node:
    handler: HandlerState
    state: str = _WAITING
    remaining: int = 0
    ready_at: Optional[int] = None
    start: Optional[int] = None
    io_pending: int = 0
    oom_pending: int = 0


@dataclass
class _QItem:
    uid: str
    inst: "_Instance"
    node: str
    height: int
    encoder_ref: Optional[str]
    est_cost: int

    @property
    def instance(self) -> str:
        return self.inst.id


@dataclass
class _Unit:
    uid: str
    members: list[_QItem]
    deadline: int
    height: int
    encoder: bool


@dataclass
class _Instance:
    id: str
    tid: str
    index: int
    arrival: int
    budget: int
    base: DagSpec
    graph: DagSpec
    heights: dict[str, int]
    nodes: dict[str, _Node]
    sub: dict[str, int] = field(default_factory=dict)
    d_np: dict[str, int] = field(default_factory=dict)
    orphans: dict[str, _Node] = field(default_factory=dict)
    deps: set[str] = field(default_factory=set)
    after: tuple[str, ...] = ()
    dependents: list["_Instance"] = field(default_factory=list)
    running: int = 0
    n_done: int = 0
    dropped: bool = False
    ended: bool = False

    @property
    def deadline(self) -> int:
        return self.arrival + self.budget


@dataclass
class _Slot:
    idx: int
    speed: float
    unit: Optional[_Unit] = None
    finish_at: int = 0
    exec_ns: int = 0
    mem: float = 0.0


class _EstimatorView:
    """Adapts the engine-wide estimator to per-template node ids."""

    def __init__(self, est: CostEstimator, tid: str):
        self.est, self.tid = est, tid

    def estimate(self, node: str, fallback: int) -> int:
        return self.est.estimate((self.tid, node), fallback)


def _template_order(templates: Sequence[DagTemplate]) -> list[int]:
    index = {t.id: i for i, t in enumerate(templates)}
    order: list[int] = []
    state: dict[int, int] = {}

    def visit(i: int, path: tuple[str, ...]):
        if state.get(i) == 2:
            return
        if state.get(i) == 1:
            raise InvalidWorkload(f"cyclic template dependencies: {' -> '.join(path)}")
        state[i] = 1
        for dep in templates[i].depends_on:
            if dep not in index:
                raise InvalidWorkload(f"template {templates[i].id!r} depends on unknown {dep!r}")
            visit(index[dep], path + (dep,))
        state[i] = 2
        order.append(i)

    for i, t in enumerate(templates):
        visit(i, (t.id,))
    return order


def default_horizon(workload: Workload) -> int:
    h = 0
    for t in workload.templates:
        arr = t.arrival_times()
        if arr:
            h = max(h, arr[-1] + 10 * t.spec.deadline)
    return h


class _Engine:
    def __init__(self, workload, platform, variant, cfg, seed, exec_model):
        self.wl = workload
        self.platform = platform
        self.variant = SchedulerVariant(variant)
        self.cfg = cfg
        self.model = exec_model or ExecModel()
        self.rng = random.Random(seed)
        self.trace = SimTrace(variant=self.variant.value, seed=seed)
        self.heap: list = []
        self.seq = count()
        self.now = 0
        self.queue = ReadyQueue()
        self.pending: list[tuple[_Instance, str]] = []
        self.slots = [_Slot(i, s) for i, s in enumerate(platform.slot_speeds())]
        self.est = CostEstimator(k=cfg.k)
        self.sync = SyncState()
        self.templates: dict[str, DagTemplate] = {}
        self.specs: dict[str, DagSpec] = {}
        self.instances: list[_Instance] = []
        self.live: dict[str, _Instance] = {}
        self.latest: dict[str, _Instance] = {}
        self.active = 0
        self.sync_interval = cfg.sync_interval or platform.tick
        self.sync_armed = False
        self.last_sync: Optional[int] = None
        self.monitor_armed = False
        self.monitor_due = False
        self.history: list[HealthSample] = []
        self.overloaded = False
        self.tick_index = 0
        self.busy_area = 0.0
        self.busy_mark = 0
        self.last_monitor: Optional[tuple[int, float]] = None
        self.injections: dict[tuple[str, str], list[Injection]] = {}
        self.horizon = cfg.horizon if cfg.horizon is not None else default_horizon(workload)

    # -- setup ------------------------------------------------------------

    def _check(self):
        seen = set()
        for t in self.wl.templates:
            if t.id in seen:
                raise InvalidWorkload(f"duplicate template id {t.id!r}")
            if "/" in t.id or "#" in t.id:
                raise InvalidWorkload(f"template id {t.id!r} may not contain '/' or '#'")
            seen.add(t.id)
            try:
                validate(t.spec)
            except GraphError as exc:
                raise InvalidWorkload(f"template {t.id!r}: {exc}") from exc
        _template_order(self.wl.templates)
        for m in self.wl.mutations:
            if m.target_dag not in seen:
                raise InvalidWorkload(f"mutation targets unknown DAG {m.target_dag!r}")
        for inj in self.wl.injections:
            if inj.dag not in seen:
                raise InvalidWorkload(f"injection targets unknown DAG {inj.dag!r}")
        if self.variant.proportional:
            table = self.wl.contention or ContentionTable()
            atomic = [
                v for t in self.wl.templates for v, a in t.spec.nodes.items() if a.kind is NodeKind.ATOMIC
            ]
            atomic += [
                m.op.node
                for m in self.wl.mutations
                if isinstance(m.op, AddNode) and m.op.attrs.kind is NodeKind.ATOMIC
            ]
            for v in atomic:
                if (v, self.platform.name) not in table:
                    raise InvalidWorkload(
                        f"atomic node {v!r} has no contention profile for platform {self.platform.name!r}"
                    )

    def _push(self, t: int, prio: int, kind: str, payload=None):
        heapq.heappush(self.heap, (t, prio, next(self.seq), kind, payload))

    def _emit(self, kind: str, dag_id: str = "-", node_id: str = "-", extra: str = ""):
        self.trace.events.append(TraceEvent(self.now, kind, dag_id, node_id, extra))

    # -- main loop --------------------------------------------------------

    def run(self) -> SimTrace:
        self._check()
        for t in self.wl.templates:
            self.templates[t.id] = t
            self.specs[t.id] = t.spec
        for inj in self.wl.injections:
            self.injections.setdefault((inj.dag, inj.node), []).append(inj)
        for i in _template_order(self.wl.templates):
            t = self.wl.templates[i]
            for k, a in enumerate(t.arrival_times()):
                self._push(a, _P_RELEASE, "release", (t.id, k))
        for m in self.wl.mutations:
            self._push(m.at, _P_MUTATION, "mutation", m)
        while self.heap:
            t = self.heap[0][0]
            if t > self.horizon:
                if self.active:
                    raise HorizonExceeded(self._diagnostics(t))
                break
            self._advance(t)
            while self.heap and self.heap[0][0] == t:
                _, _, _, kind, payload = heapq.heappop(self.heap)
                getattr(self, "_on_" + kind)(payload)
            self._dispatch()
            if self.monitor_due:
                self.monitor_due = False
                self._monitor()
            self._arm_ticks()
        if self.active:
            raise HorizonExceeded(self._diagnostics(self.now))
        return self.trace

    def _diagnostics(self, t: int) -> dict:
        live = [i.id for i in self.instances if not i.ended]
        return {
            "time": t,
            "horizon": self.horizon,
            "active_instances": live[:10],
            "n_active": len(live),
            "queue_len": len(self.queue),
        }

    def _advance(self, t: int):
        busy = sum(1 for s in self.slots if s.unit is not None)
        self.busy_area += busy * (t - self.busy_mark)
        self.busy_mark = t
        self.now = t

    def _arm_ticks(self):
        if not self.active:
            return
        if not self.variant.on_demand and not self.sync_armed:
            self.sync_armed = True
            iv = self.sync_interval
            nxt = -(-self.now // iv) * iv
            if self.last_sync is not None and nxt <= self.last_sync:
                nxt += iv
            self._push(nxt, _P_SYNC, "sync")
        if self.variant.monitors and not self.monitor_armed:
            self.monitor_armed = True
            iv = self.cfg.burst.tick
            nxt = -(-self.now // iv) * iv
            if self.last_monitor is not None and nxt <= self.last_monitor[0]:
                nxt += iv
            self._push(nxt, _P_MONITOR, "monitor")

    # -- releases ---------------------------------------------------------

    def _on_release(self, payload):
        tid, k = payload
        tmpl = self.templates[tid]
        spec = self.specs[tid]
        iid = f"{tid}#{k:04d}"
        base = DagSpec(iid, spec.nodes, spec.edges, spec.deadline, self.now)
        graph = refine_all(base) if self.variant.refines else base
        inst = _Instance(
            id=iid,
            tid=tid,
            index=k,
            arrival=self.now,
            budget=spec.deadline,
            base=base,
            graph=graph,
            heights=heights(graph),
            nodes={},
        )
        self.instances.append(inst)
        self.live[iid] = inst
        self.active += 1
        self._emit(RELEASE, iid, "-", format_extra([("deadline", inst.deadline), ("template", tid)]))
        for v in graph.nodes:
            inst.nodes[v] = self._new_node(inst, v)
        self._assign_initial(inst)
        if self.variant.on_demand:
            self.sync.register(iid, graph)
        after = []
        for dep_tid in tmpl.depends_on:
            dep = self.latest.get(dep_tid)
            if dep is None:
                continue
            after.append(dep.id)
            if not dep.ended:
                inst.deps.add(dep.id)
                dep.dependents.append(inst)
        inst.after = tuple(after)
        self.latest[tid] = inst
        if not inst.deps:
            for v in graph.sources:
                self._make_ready(inst, v)

    def _new_node(self, inst: _Instance, v: str) -> _Node:
        nd = _Node(HandlerState(f"{inst.id}/{v}", HState.READY, self.now))
        nd.remaining = len(inst.graph.preds[v])
        origin = self._origin(v)
        for inj in self.injections.get((inst.tid, origin), ()):
            if inj.instance is not None and inj.instance != inst.index:
                continue
            if origin != v and not v.endswith(".enc"):
                continue
            if inj.kind == "io_wait":
                nd.io_pending = max(nd.io_pending, inj.dwell)
            else:
                nd.oom_pending = max(nd.oom_pending, inj.dwell)
        return nd

    @staticmethod
    def _origin(v: str) -> str:
        # refined nodes inject through the stage they came from
        for suffix in (".enc",):
            if v.endswith(suffix):
                return v[: -len(suffix)]
        head, sep, tail = v.rpartition(".dec")
        if sep and tail.isdigit():
            return head
        return v

    # -- deadlines --------------------------------------------------------

    def _assign_initial(self, inst: _Instance):
        g = inst.graph
        if not self.variant.proportional:
            inst.sub = {v: inst.deadline for v in g.nodes}
            return
        asg = proportional_assign(g, inst.budget, {v: a.wcet for v, a in g.nodes.items()}, inst.arrival)
        inst.sub = dict(asg.node_subdeadlines)
        table = self.wl.contention or ContentionTable()
        for v, a in g.nodes.items():
            if a.kind is NodeKind.ATOMIC and v not in inst.d_np:
                inst.d_np[v] = atomic_deadline(v, a, table, self.platform.name)

    def _reassign(self, inst: _Instance):
        g = inst.graph
        done = {v for v, nd in inst.nodes.items() if nd.state == _DONE}
        running = {v: self.now - nd.start for v, nd in inst.nodes.items() if nd.state == _RUNNING}
        try:
            asg = reassign_residual(
                g, done, self.now - inst.arrival, inst.budget, _EstimatorView(self.est, inst.tid), running
            )
        except (BudgetExhausted, DeadlineError):
            return False
        inst.sub.update(asg.node_subdeadlines)
        for v in asg.node_subdeadlines:
            self._rekey(inst, v)
        return True

    def _key(self, inst: _Instance, v: str) -> int:
        if v in inst.d_np:
            return inst.nodes[v].ready_at + inst.d_np[v]
        return inst.sub[v]

    def _rekey(self, inst: _Instance, v: str):
        uid = f"{inst.id}/{v}"
        if uid in self.queue:
            item = self.queue.item(uid)
            key = self._key(inst, v)
            if key != self.queue.deadline(uid):
                self.queue.push(uid, key, item)

    # -- readiness --------------------------------------------------------

    def _make_ready(self, inst: _Instance, v: str):
        nd = inst.nodes[v]
        nd.state = _READY
        nd.ready_at = self.now
        a = inst.graph.nodes[v]
        item = _QItem(
            uid=f"{inst.id}/{v}",
            inst=inst,
            node=v,
            height=inst.heights[v],
            encoder_ref=a.encoder_ref if a.role is Role.SHARED_ENCODER else None,
            est_cost=self.est.estimate((inst.tid, v), a.wcet),
        )
        self.queue.push(item.uid, self._key(inst, v), item)

    def _satisfied(self, inst: _Instance, v: str):
        """All predecessors of ``v`` are done; release it through the sync
        mechanism of the variant."""
        nd = inst.nodes[v]
        if self.variant.on_demand:
            if self.cfg.barrier_overhead:
                nd.state = _PENDING
                self._push(self.now + self.cfg.barrier_overhead, _P_READY, "ready", (inst, v))
            else:
                self._make_ready(inst, v)
        else:
            nd.state = _PENDING
            self.pending.append((inst, v))

    def _on_ready(self, payload):
        inst, v = payload
        nd = inst.nodes.get(v)
        if nd is not None and nd.state == _PENDING and not inst.dropped:
            self._make_ready(inst, v)

    def _on_sync(self, _):
        self.sync_armed = False
        self.last_sync = self.now
        if not self.active:
            return
        self._emit(BARRIER, "-", "-", format_extra([("kind", BarrierKind.PERIODIC.value)]))
        batch, self.pending = self.pending, []
        for inst, v in batch:
            nd = inst.nodes.get(v)
            if nd is None or nd.state != _PENDING or inst.dropped:
                continue
            if self.cfg.barrier_overhead:
                self._push(self.now + self.cfg.barrier_overhead, _P_READY, "ready", (inst, v))
            else:
                self._make_ready(inst, v)

    # -- dispatch ---------------------------------------------------------

    def _units(self, limit: int) -> list[tuple[int, str, _Unit]]:
        entries = self.queue.entries()
        if not self.variant.merges:
            return [(d, uid, _Unit(uid, [it], d, it.height, it.encoder_ref is not None)) for d, uid, it in entries[:limit]]
        plain, enc = [], []
        by_uid = {}
        for d, uid, it in entries:
            by_uid[uid] = (d, it)
            if it.encoder_ref is None:
                if len(plain) < limit:
                    plain.append((d, uid, _Unit(uid, [it], d, it.height, False)))
            else:
                enc.append(SubtaskInstance(uid, it.encoder_ref, it.inst.nodes[it.node].ready_at, d, it.height))
        out = plain
        for mu in dynamic_merge(enc, self.cfg.gamma):
            members = [by_uid[m][1] for m in mu.members]
            out.append((mu.unit_deadline, mu.id, _Unit(mu.id, members, mu.unit_deadline, members[0].height, True)))
        out.sort(key=lambda e: (e[0], e[1]))
        return out[:limit]

    def _dispatch(self):
        while True:
            free = sorted((s for s in self.slots if s.unit is None), key=lambda s: (-s.speed, s.idx))
            if not free or not len(self.queue):
                return
            chosen = edf_select(self._units(len(free)), len(free))
            if self.variant.merges:
                chosen = [u for group in batch_same_height(chosen) for u in group]
            started: list[tuple[_Unit, _Slot]] = []
            bounced = False
            for unit, slot in zip(chosen, free):
                if self._try_start(unit, slot):
                    started.append((unit, slot))
                else:
                    bounced = True
            self._time_units(started)
            if not bounced:
                return

    def _try_start(self, unit: _Unit, slot: _Slot) -> bool:
        oom = max((it.inst.nodes[it.node].oom_pending for it in unit.members), default=0)
        for it in unit.members:
            self.queue.remove(it.uid)
        if oom:
            for it in unit.members:
                nd = it.inst.nodes[it.node]
                nd.oom_pending = 0
                nd.handler = fsm_step(nd.handler, HEvent.DISPATCH, self.now)
                self._emit_dispatch(unit, it)
                nd.handler = fsm_step(nd.handler, HEvent.MEM_FAIL, self.now)
                nd.state = _OOM
                self._emit(REQUEUE, it.inst.id, it.node, format_extra([("reason", "OOM"), ("dwell", oom)]))
            self._push(self.now + oom, _P_RECLAIM, "reclaim", unit)
            return False
        slot.unit = unit
        for it in unit.members:
            inst, nd = it.inst, it.inst.nodes[it.node]
            nd.handler = fsm_step(nd.handler, HEvent.DISPATCH, self.now)
            nd.state = _RUNNING
            nd.start = self.now
            inst.running += 1
            self._emit_dispatch(unit, it)
        return True

    def _emit_dispatch(self, unit: _Unit, it: _QItem):
        inst = it.inst
        nd = inst.nodes[it.node]
        pairs = [
            ("unit", unit.uid),
            ("enc", 1 if it.encoder_ref is not None else 0),
            ("h", it.height),
            ("rdy", nd.ready_at),
            ("key", unit.deadline),
            ("preds", ",".join(inst.graph.preds[it.node])),
        ]
        if inst.after and not inst.graph.preds[it.node]:
            pairs.append(("after", ",".join(inst.after)))
        self._emit(DISPATCH, inst.id, it.node, format_extra(pairs))

    def _time_units(self, started: list[tuple[_Unit, _Slot]]):
        if not started:
            return
        slow = active_slowdown(self.wl.interference, self.now)
        for unit, slot in started:
            slot.mem = sum(it.inst.graph.nodes[it.node].mem for it in unit.members)
        total_mem = sum(s.mem for s in self.slots if s.unit is not None)
        for unit, slot in started:
            rep = max(unit.members, key=lambda it: (it.inst.graph.nodes[it.node].wcet, it.uid))
            wcet = rep.inst.graph.nodes[rep.node].wcet
            factor = slow
            if self.platform.mem_contention:
                others = total_mem - slot.mem
                factor *= 1.0 + self.platform.mem_contention * others / self.platform.mem_capacity
            dur = sample_exec(wcet, self.model, self.rng, factor)
            if slot.speed < 1.0:
                dur = math.ceil(dur / slot.speed)
            slot.exec_ns = dur
            slot.finish_at = self.now + dur
            self._push(slot.finish_at, _P_FINISH, "finish", slot)

    def _on_reclaim(self, unit: _Unit):
        for it in unit.members:
            inst, v = it.inst, it.node
            nd = inst.nodes.get(v)
            if nd is None or nd.state != _OOM:
                continue
            nd.handler = fsm_step(nd.handler, HEvent.MEM_RECLAIM, self.now)
            if inst.dropped:
                continue
            ready_at = nd.ready_at
            self._make_ready(inst, v)
            nd.ready_at = ready_at
            self._rekey(inst, v)

    # -- completion -------------------------------------------------------

    def _on_finish(self, slot: _Slot):
        unit = slot.unit
        io = 0
        for it in unit.members:
            nd = self._node_of(it)
            if nd.io_pending:
                io = max(io, nd.io_pending)
        if io:
            for it in unit.members:
                nd = self._node_of(it)
                nd.io_pending = 0
                nd.handler = fsm_step(nd.handler, HEvent.IO_START, self.now)
            self._push(self.now + io, _P_IO_END, "io_end", slot)
            return
        self._complete(slot)

    def _on_io_end(self, slot: _Slot):
        for it in slot.unit.members:
            nd = self._node_of(it)
            nd.handler = fsm_step(nd.handler, HEvent.IO_END, self.now)
        self._complete(slot)

    @staticmethod
    def _node_of(it: _QItem) -> _Node:
        nd = it.inst.nodes.get(it.node)
        if nd is None or nd.state != _RUNNING:
            nd = it.inst.orphans[it.node]
        return nd

    def _complete(self, slot: _Slot):
        unit, dur = slot.unit, slot.exec_ns
        slot.unit = None
        slot.mem = 0.0
        finished = []
        for it in unit.members:
            inst = it.inst
            orphan = it.node in inst.orphans and (it.node not in inst.nodes or inst.nodes[it.node].state != _RUNNING)
            nd = inst.orphans.pop(it.node) if orphan else inst.nodes[it.node]
            nd.handler = fsm_step(nd.handler, HEvent.FINISH, self.now)
            nd.state = _DONE
            inst.running -= 1
            self.est.observe((inst.tid, it.node), dur)
            self._emit(FINISH, inst.id, it.node, format_extra([("unit", unit.uid), ("exec", dur)]))
            if not orphan:
                inst.n_done += 1
                finished.append((inst, it.node))
        if self.variant.on_demand:
            live = [(inst.id, v) for inst, v in finished if not inst.ended]
            for b in emit_barriers(live, self.sync, self.now):
                pairs = [("kind", b.kind.value)]
                if b.height is not None:
                    pairs.append(("h", b.height))
                self._emit(BARRIER, b.dag or "-", b.node or "-", format_extra(pairs))
        touched: list[_Instance] = []
        for inst, v in finished:
            if inst not in touched:
                touched.append(inst)
            if inst.dropped:
                continue
            for w in inst.graph.succs[v]:
                nw = inst.nodes[w]
                nw.remaining -= 1
                if nw.remaining == 0 and nw.state == _WAITING:
                    self._satisfied(inst, w)
        for inst in {id(i): i for i in (it.inst for it in unit.members)}.values():
            if self._maybe_end(inst):
                continue
            if inst in touched and self.variant.reassigns and not inst.dropped:
                self._reassign(inst)

    def _maybe_end(self, inst: _Instance) -> bool:
        if inst.ended:
            return True
        complete = inst.n_done == len(inst.graph.nodes)
        if inst.running == 0 and (complete or inst.dropped):
            inst.ended = True
            self.active -= 1
            del self.live[inst.id]
            if self.variant.on_demand:
                self.sync.forget(inst.id)
            for dep in inst.dependents:
                dep.deps.discard(inst.id)
                if not dep.deps and not dep.dropped and not dep.ended:
                    for v in dep.graph.sources:
                        if dep.nodes[v].state == _WAITING:
                            self._satisfied(dep, v)
            return True
        return False

    # -- shedding ---------------------------------------------------------

    def _drop_instance(self, inst: _Instance, reason: str):
        if inst.dropped or inst.ended:
            return
        inst.dropped = True
        for v, nd in inst.nodes.items():
            if nd.state in _NOT_STARTED:
                uid = f"{inst.id}/{v}"
                if uid in self.queue:
                    self.queue.remove(uid)
                nd.state = _DROPPED
                self._emit(DROP, inst.id, v, format_extra([("reason", reason)]))
        for dep in inst.dependents:
            dep.deps.discard(inst.id)
        self._maybe_end(inst)
        for dep in inst.dependents:
            if not dep.deps and not dep.dropped and not dep.ended:
                for v in dep.graph.sources:
                    if dep.nodes[v].state == _WAITING:
                        self._satisfied(dep, v)

    def _score(self, item: _QItem) -> tuple[float, int]:
        return self._score_node(item.inst, item.node)

    def _score_node(self, inst: _Instance, v: str) -> tuple[float, int]:
        key = self._key(inst, v)
        slack = key - self.now
        span = inst.d_np[v] if v in inst.d_np else key - inst.arrival
        if span <= 0:
            return 1.0, slack
        return criticality_score(slack, span), slack

    def _critical_instances(self, level: float) -> list[str]:
        """Live instances whose most urgent queued or running node scores
        at least ``level``."""
        out = []
        for inst in self.live.values():
            if inst.dropped:
                continue
            for v, nd in inst.nodes.items():
                if nd.state in (_READY, _RUNNING) and self._score_node(inst, v)[0] >= level:
                    out.append(inst.id)
                    break
        return sorted(out)

    def _on_monitor(self, _):
        self.monitor_armed = False
        self.monitor_due = True

    def _monitor(self):
        cfg = self.cfg.burst
        n = len(self.slots)
        if self.last_monitor is None or self.now == self.last_monitor[0]:
            u = sum(1 for s in self.slots if s.unit is not None) / n
        else:
            t0, area0 = self.last_monitor
            u = (self.busy_area - area0) / (n * (self.now - t0))
        if self.last_monitor is not None and self.now - self.last_monitor[0] > cfg.tick:
            # idle gap: the unsampled ticks were not overloaded
            self.history.clear()
        self.last_monitor = (self.now, self.busy_area)
        u = min(1.0, max(0.0, u))
        scores, slack = {}, {}
        for _, uid, item in self.queue.entries():
            scores[uid], slack[uid] = self._score(item)
        busy = sum(min(s.finish_at - self.now, cfg.tick) for s in self.slots if s.unit is not None)
        sample = HealthSample(self.tick_index, u, len(self.queue), slack, busy, n * cfg.tick)
        self.tick_index += 1
        self.history.append(sample)
        if len(self.history) > cfg.w:
            self.history.pop(0)
        if not is_hot(sample, cfg) or not detect_overload(self.history, cfg):
            self.overloaded = False
            return
        rising = not self.overloaded
        self.overloaded = True
        hi = self._critical_instances(0.8)
        dropped: list[str] = []
        if self.cfg.shedding:
            _, dropped = proactive_drop(self.queue, scores, cfg, sample)
        victims = []
        for uid in dropped:
            inst = self.queue.item(uid).inst
            if inst not in victims:
                victims.append(inst)
        if not (rising or victims or hi):
            return
        self._emit(
            OVERLOAD,
            "-",
            "-",
            format_extra([("u", f"{u:.4f}"), ("q", len(self.queue)), ("hi", ",".join(hi)), ("dropped", len(victims))]),
        )
        for inst in victims:
            self._drop_instance(inst, "Burst")
        if victims:
            # overload must be re-established on post-shedding samples
            self.history.clear()

    # -- mutations --------------------------------------------------------

    def _on_mutation(self, m: Mutation):
        tid = m.target_dag
        desc = _describe_op(m)
        try:
            new_spec = apply_mutation(self.specs[tid], m)
        except MutationBreaksInvariant as exc:
            self._emit(MUTATION, tid, desc, format_extra([("status", "skipped"), ("reason", _clean(str(exc)))]))
            return
        self.specs[tid] = new_spec
        applied = skipped = reassigned = 0
        for inst in list(self.live.values()):
            if inst.tid != tid or inst.dropped:
                continue
            ok, re = self._mutate_instance(inst, m)
            applied += ok
            skipped += not ok
            reassigned += re
        self._emit(
            MUTATION,
            tid,
            desc,
            format_extra(
                [("status", "applied"), ("instances", applied), ("skipped", skipped), ("reassigned", reassigned)]
            ),
        )

    def _mutate_instance(self, inst: _Instance, m: Mutation) -> tuple[bool, bool]:
        try:
            base = apply_mutation(inst.base, m)
        except MutationBreaksInvariant:
            return False, False
        graph = refine_all(base) if self.variant.refines else base
        started = {v for v, nd in inst.nodes.items() if nd.state not in _NOT_STARTED and nd.state != _DROPPED}
        for u, v in graph.edges:
            if v in started and not (u in inst.nodes and inst.nodes[u].state == _DONE):
                return False, False
        inst.base, inst.graph = base, graph
        inst.heights = heights(graph)
        for v in list(inst.nodes):
            if v in graph.nodes:
                continue
            nd = inst.nodes.pop(v)
            uid = f"{inst.id}/{v}"
            if nd.state == _RUNNING:
                inst.orphans[v] = nd
            elif nd.state == _DONE:
                inst.n_done -= 1
            else:
                if uid in self.queue:
                    self.queue.remove(uid)
                self._emit(DROP, inst.id, v, format_extra([("reason", "Mutation")]))
        for v in graph.nodes:
            if v not in inst.nodes:
                inst.nodes[v] = self._new_node(inst, v)
                inst.nodes[v].state = _WAITING
        if self.variant.proportional:
            table = self.wl.contention or ContentionTable()
            for v, a in graph.nodes.items():
                if a.kind is NodeKind.ATOMIC and v not in inst.d_np:
                    inst.d_np[v] = atomic_deadline(v, a, table, self.platform.name)
        reassigned = False
        if not self.variant.proportional:
            for v in graph.nodes:
                inst.sub.setdefault(v, inst.deadline)
        elif self.variant.reassigns:
            reassigned = self._reassign(inst)
            for v in graph.nodes:
                inst.sub.setdefault(v, inst.deadline)
        else:
            asg = proportional_assign(graph, inst.budget, {v: a.wcet for v, a in graph.nodes.items()}, inst.arrival)
            inst.sub = dict(asg.node_subdeadlines)
            reassigned = True
        if self.variant.on_demand:
            self.sync.register(inst.id, graph)
        waiting_on_deps = bool(inst.deps)
        for v in sorted(graph.nodes):
            nd = inst.nodes[v]
            if nd.state not in _NOT_STARTED or nd.state == _OOM:
                continue
            nd.remaining = sum(1 for u in graph.preds[v] if inst.nodes[u].state != _DONE)
            blocked = nd.remaining > 0 or (waiting_on_deps and not graph.preds[v])
            uid = f"{inst.id}/{v}"
            if blocked and nd.state in (_READY, _PENDING):
                if uid in self.queue:
                    self.queue.remove(uid)
                nd.state = _WAITING
            elif not blocked and nd.state == _WAITING:
                if graph.preds[v]:
                    self._satisfied(inst, v)
                else:
                    self._make_ready(inst, v)
            elif nd.state == _READY:
                self.queue.item(uid).height = inst.heights[v]
                self._rekey(inst, v)
        self._maybe_end(inst)
        return True, reassigned


def _describe_op(m: Mutation) -> str:
    op = m.op
    name = type(op).__name__
    if hasattr(op, "node"):
        return f"{name}:{op.node}"
    return f"{name}:{op.u}->{op.v}"


def _clean(text: str) -> str:
    return text.replace("\t", " ").replace("\n", " ").replace(";", ",").replace("=", ":")


def run(
    workload: Workload,
    platform: PlatformModel,
    variant: SchedulerVariant,
    cfg: Optional[SchedulerConfig] = None,
    seed: int = 0,
    exec_model: Optional[ExecModel] = None,
) -> SimTrace:
    """Simulate ``workload`` under one scheduler variant.

    A pure function of its arguments: equal inputs give equal traces.
    """
    return _Engine(workload, platform, variant, cfg or SchedulerConfig(), seed, exec_model).run()
