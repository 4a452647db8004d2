"""JSON workload files.

Times are written in milliseconds and held internally as integer ns.
Every validation failure names the offending field by its JSON path, e.g.
``dags[0].nodes[2].wcet_ms``. See ``docs/workload-format.md`` for the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .deadlines import ContentionTable
from .graph import (
    AddEdge,
    AddNode,
    DagSpec,
    GraphError,
    Mutation,
    NodeAttrs,
    NodeKind,
    RemoveEdge,
    RemoveNode,
    Role,
    validate,
)
from .overload import BurstConfig
from .simulator import (
    DagTemplate,
    ExecModel,
    Injection,
    InterferenceWindow,
    PlatformModel,
    SchedulerConfig,
    Workload,
    _template_order,
    InvalidWorkload,
)
from .timeunits import ms, to_ms

FORMAT_VERSION = 1


class ParseError(ValueError):
    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class ValidationError(ValueError):
    def __init__(self, field: str, reason: str):
        self.field, self.reason = field, reason
        super().__init__(f"{field}: {reason}")


@dataclass(frozen=True)
class WorkloadFile:
    version: int = FORMAT_VERSION
    platform: PlatformModel = field(default_factory=PlatformModel)
    exec_model: ExecModel = field(default_factory=ExecModel)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    workload: Workload = field(default_factory=Workload)
    qoe_lambda: float = 1.0


# --- reading ---------------------------------------------------------------

_MISSING = object()


class _Obj:
    """A JSON object plus its path, with typed accessors."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ValidationError(path or "<root>", "expected an object")
        self.data, self.path = data, path

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, default=_MISSING):
        if key in self.data:
            return self.data[key]
        if default is _MISSING:
            raise ValidationError(self._at(key), "required field missing")
        return default

    def num(self, key: str, default=_MISSING, *, positive=False, nonneg=False) -> float:
        v = self.get(key, default)
        if v is None and default is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(self._at(key), f"expected a number, got {v!r}")
        if positive and not v > 0:
            raise ValidationError(self._at(key), "must be > 0")
        if nonneg and not v >= 0:
            raise ValidationError(self._at(key), "must be >= 0")
        return v

    def integer(self, key: str, default=_MISSING, **kw) -> int:
        v = self.num(key, default, **kw)
        if v is None:
            return None
        if int(v) != v:
            raise ValidationError(self._at(key), "expected an integer")
        return int(v)

    def text(self, key: str, default=_MISSING) -> str:
        v = self.get(key, default)
        if v is None and default is None:
            return None
        if not isinstance(v, str) or not v:
            raise ValidationError(self._at(key), "expected a non-empty string")
        return v

    def flag(self, key: str, default=_MISSING) -> bool:
        v = self.get(key, default)
        if not isinstance(v, bool):
            raise ValidationError(self._at(key), "expected true or false")
        return v

    def items(self, key: str, default=()) -> list[tuple[Any, str]]:
        v = self.get(key, list(default))
        if not isinstance(v, list):
            raise ValidationError(self._at(key), "expected a list")
        return [(x, f"{self._at(key)}[{i}]") for i, x in enumerate(v)]

    def sub(self, key: str) -> "_Obj":
        return _Obj(self.get(key, {}), self._at(key))


def _ns(v: Optional[float]) -> Optional[int]:
    return None if v is None else ms(v)


def _guard(path: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValidationError, ParseError):
        raise
    except (ValueError, TypeError) as exc:
        raise ValidationError(path, str(exc)) from exc


def _read_platform(o: _Obj) -> PlatformModel:
    return _guard(
        o.path,
        PlatformModel,
        rho=o.num("rho", 1.0),
        tick=ms(o.num("tick_ms", 5.0, positive=True)),
        name=o.text("name", "sim"),
        mem_capacity=float(o.num("mem_capacity_mb", 32768.0, positive=True)),
        mem_contention=float(o.num("mem_contention", 0.0, nonneg=True)),
    )


def _read_exec(o: _Obj) -> ExecModel:
    return _guard(
        o.path,
        ExecModel,
        distribution=o.text("distribution", "deterministic"),
        alpha=float(o.num("alpha", 0.7)),
        seed=o.integer("seed", 0),
    )


def _read_scheduler(o: _Obj) -> SchedulerConfig:
    b = o.sub("burst")
    burst = _guard(
        b.path,
        BurstConfig,
        theta_u=float(b.num("theta_u", 0.90)),
        q_max=b.integer("q_max", 8),
        w=b.integer("w", 3),
        tick=ms(b.num("tick_ms", 5.0, positive=True)),
    )
    return _guard(
        o.path,
        SchedulerConfig,
        gamma=ms(o.num("gamma_ms", 100.0, nonneg=True)),
        k=o.integer("k", 8),
        burst=burst,
        barrier_overhead=ms(o.num("barrier_overhead_ms", 0.0, nonneg=True)),
        sync_interval=_ns(o.num("sync_interval_ms", None)),
        shedding=o.flag("shedding", True),
        horizon=_ns(o.num("horizon_ms", None)),
    )


def _read_attrs(o: _Obj) -> NodeAttrs:
    decs = o.get("dec_costs_ms", None)
    if decs is not None:
        if not isinstance(decs, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in decs):
            raise ValidationError(f"{o.path}.dec_costs_ms", "expected a list of numbers")
        decs = tuple(ms(x) for x in decs)
    kind = o.text("kind", NodeKind.PARTITIONABLE.value)
    role = o.text("role", Role.ORDINARY.value)
    try:
        kind, role = NodeKind(kind), Role(role)
    except ValueError as exc:
        raise ValidationError(o.path, str(exc)) from exc
    return _guard(
        o.path,
        NodeAttrs,
        wcet=ms(o.num("wcet_ms", positive=True)),
        mem=float(o.num("mem_mb", 0.0, nonneg=True)),
        kind=kind,
        role=role,
        next_release=ms(o.num("next_release_ms", 0.0, nonneg=True)),
        encoder_ref=o.text("encoder_ref", None),
        enc_cost=_ns(o.num("enc_cost_ms", None)),
        dec_costs=decs,
    )


def _read_edge(raw, path: str) -> tuple[str, str]:
    if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(x, str) for x in raw)):
        raise ValidationError(path, "an edge is a [from, to] pair of node ids")
    return raw[0], raw[1]


def _read_dag(o: _Obj) -> DagTemplate:
    did = o.text("id")
    nodes = {}
    for raw, path in o.items("nodes"):
        n = _Obj(raw, path)
        nid = n.text("id")
        if nid in nodes:
            raise ValidationError(f"{path}.id", f"duplicate node id {nid!r}")
        nodes[nid] = _read_attrs(n)
    edges = [_read_edge(raw, path) for raw, path in o.items("edges")]
    if len(set(edges)) != len(edges):
        raise ValidationError(f"{o.path}.edges", "duplicate edge")
    spec = _guard(o.path, DagSpec, did, nodes, frozenset(edges), ms(o.num("deadline_ms", positive=True)), 0)
    try:
        validate(spec)
    except GraphError as exc:
        raise ValidationError(f"{o.path}.edges", str(exc)) from exc
    arrivals = o.get("arrivals_ms", None)
    if arrivals is not None:
        if not isinstance(arrivals, list):
            raise ValidationError(f"{o.path}.arrivals_ms", "expected a list")
        arrivals = tuple(ms(a) for a in arrivals)
    deps = o.get("depends_on", [])
    if not isinstance(deps, list) or not all(isinstance(x, str) for x in deps):
        raise ValidationError(f"{o.path}.depends_on", "expected a list of DAG ids")
    return _guard(
        o.path,
        DagTemplate,
        spec,
        period=_ns(o.num("period_ms", None)),
        count=o.integer("count", 1, nonneg=True),
        offset=ms(o.num("offset_ms", 0.0, nonneg=True)),
        arrivals=arrivals,
        depends_on=tuple(deps),
    )


def _read_mutation(o: _Obj) -> Mutation:
    kind = o.text("op")
    if kind == "AddNode":
        inc = [x for x, _ in o.items("incoming")]
        out = [x for x, _ in o.items("outgoing")]
        op = AddNode(o.text("node"), _read_attrs(o.sub("attrs")), tuple(inc), tuple(out))
    elif kind == "RemoveNode":
        op = RemoveNode(o.text("node"))
    elif kind == "AddEdge":
        op = AddEdge(o.text("u"), o.text("v"))
    elif kind == "RemoveEdge":
        op = RemoveEdge(o.text("u"), o.text("v"))
    else:
        raise ValidationError(f"{o.path}.op", f"unknown mutation op {kind!r}")
    return Mutation(ms(o.num("at_ms", nonneg=True)), op, o.text("dag"))


def from_dict(data: Any) -> WorkloadFile:
    root = _Obj(data, "")
    version = root.get("version")
    if version != FORMAT_VERSION:
        raise ValidationError("version", f"unsupported version {version!r} (expected {FORMAT_VERSION})")
    templates = tuple(_read_dag(_Obj(raw, path)) for raw, path in root.items("dags"))
    ids = [t.id for t in templates]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ValidationError("dags", f"duplicate DAG id {sorted(dup)[0]!r}")
    for i, t in enumerate(templates):
        for d in t.depends_on:
            if d not in ids:
                raise ValidationError(f"dags[{i}].depends_on", f"unknown DAG {d!r}")
    try:
        _template_order(templates)
    except InvalidWorkload as exc:
        raise ValidationError("dags", str(exc)) from exc
    mutations = []
    for raw, path in root.items("mutations"):
        m = _read_mutation(_Obj(raw, path))
        if m.target_dag not in ids:
            raise ValidationError(f"{path}.dag", f"unknown DAG {m.target_dag!r}")
        mutations.append(m)
    windows = []
    for raw, path in root.items("interference"):
        w = _Obj(raw, path)
        windows.append(
            _guard(path, InterferenceWindow, ms(w.num("start_ms")), ms(w.num("end_ms")), float(w.num("slowdown")))
        )
    entries = {}
    for raw, path in root.items("contention"):
        c = _Obj(raw, path)
        entries[(c.text("node"), c.text("platform"))] = ms(c.num("delta_ms", nonneg=True))
    injections = []
    for raw, path in root.items("injections"):
        j = _Obj(raw, path)
        inj = _guard(
            path,
            Injection,
            j.text("dag"),
            j.text("node"),
            j.text("kind"),
            ms(j.num("dwell_ms", positive=True)),
            j.integer("instance", None),
        )
        if inj.dag not in ids:
            raise ValidationError(f"{path}.dag", f"unknown DAG {inj.dag!r}")
        injections.append(inj)
    wl = Workload(
        templates=templates,
        mutations=tuple(mutations),
        interference=tuple(windows),
        contention=ContentionTable(entries) if "contention" in root.data else None,
        injections=tuple(injections),
    )
    metrics = root.sub("metrics")
    return WorkloadFile(
        version=version,
        platform=_read_platform(root.sub("platform")),
        exec_model=_read_exec(root.sub("exec_model")),
        scheduler=_read_scheduler(root.sub("scheduler")),
        workload=wl,
        qoe_lambda=float(metrics.num("qoe_lambda", 1.0)),
    )


def loads(text: str) -> WorkloadFile:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from exc
    return from_dict(data)


def parse_workload(path: Union[str, Path]) -> WorkloadFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(str(p), exc.strerror or str(exc)) from exc
    try:
        return loads(text)
    except ParseError as exc:
        raise ParseError(f"{p}:{exc.location}", str(exc).split(": ", 1)[-1]) from exc


# --- writing ---------------------------------------------------------------


def _ms(ns: int) -> float:
    return to_ms(ns)


def _attrs_dict(a: NodeAttrs) -> dict:
    d = {"wcet_ms": _ms(a.wcet), "mem_mb": a.mem, "kind": a.kind.value, "role": a.role.value}
    if a.next_release:
        d["next_release_ms"] = _ms(a.next_release)
    if a.encoder_ref is not None:
        d["encoder_ref"] = a.encoder_ref
    if a.enc_cost is not None:
        d["enc_cost_ms"] = _ms(a.enc_cost)
    if a.dec_costs is not None:
        d["dec_costs_ms"] = [_ms(c) for c in a.dec_costs]
    return d


def _dag_dict(t: DagTemplate) -> dict:
    spec = t.spec
    d = {
        "id": spec.id,
        "deadline_ms": _ms(spec.deadline),
        "nodes": [{"id": v, **_attrs_dict(spec.nodes[v])} for v in sorted(spec.nodes)],
        "edges": [list(e) for e in sorted(spec.edges)],
        "count": t.count,
        "offset_ms": _ms(t.offset),
    }
    if t.period is not None:
        d["period_ms"] = _ms(t.period)
    if t.arrivals is not None:
        d["arrivals_ms"] = [_ms(a) for a in t.arrivals]
    if t.depends_on:
        d["depends_on"] = list(t.depends_on)
    return d


def _mutation_dict(m: Mutation) -> dict:
    op = m.op
    d = {"at_ms": _ms(m.at), "dag": m.target_dag, "op": type(op).__name__}
    if isinstance(op, AddNode):
        d.update(node=op.node, attrs=_attrs_dict(op.attrs), incoming=list(op.incoming), outgoing=list(op.outgoing))
    elif isinstance(op, RemoveNode):
        d["node"] = op.node
    else:
        d.update(u=op.u, v=op.v)
    return d


def to_dict(wf: WorkloadFile) -> dict:
    p, e, s, w = wf.platform, wf.exec_model, wf.scheduler, wf.workload
    sched = {
        "gamma_ms": _ms(s.gamma),
        "k": s.k,
        "burst": {
            "theta_u": s.burst.theta_u,
            "q_max": s.burst.q_max,
            "w": s.burst.w,
            "tick_ms": _ms(s.burst.tick),
        },
        "barrier_overhead_ms": _ms(s.barrier_overhead),
        "shedding": s.shedding,
    }
    if s.sync_interval is not None:
        sched["sync_interval_ms"] = _ms(s.sync_interval)
    if s.horizon is not None:
        sched["horizon_ms"] = _ms(s.horizon)
    out = {
        "version": wf.version,
        "platform": {
            "name": p.name,
            "rho": p.rho,
            "tick_ms": _ms(p.tick),
            "mem_capacity_mb": p.mem_capacity,
            "mem_contention": p.mem_contention,
        },
        "exec_model": {"distribution": e.distribution, "alpha": e.alpha, "seed": e.seed},
        "scheduler": sched,
        "metrics": {"qoe_lambda": wf.qoe_lambda},
        "dags": [_dag_dict(t) for t in w.templates],
        "mutations": [_mutation_dict(m) for m in w.mutations],
        "interference": [
            {"start_ms": _ms(x.start), "end_ms": _ms(x.end), "slowdown": x.slowdown} for x in w.interference
        ],
        "injections": [
            {"dag": j.dag, "node": j.node, "kind": j.kind, "dwell_ms": _ms(j.dwell), "instance": j.instance}
            for j in w.injections
        ],
    }
    if w.contention is not None:
        out["contention"] = [
            {"node": n, "platform": pf, "delta_ms": _ms(d)} for (n, pf), d in sorted(w.contention.entries.items())
        ]
    return out


def serialize(wf: WorkloadFile) -> str:
    return json.dumps(to_dict(wf), indent=2) + "\n"


def write_workload(wf: WorkloadFile, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize(wf))
