"""DAG task model: node attributes, precedence, heights, level sets,
critical paths and run-time topology mutations.

Graphs are immutable values. Every mutation returns a new ``DagSpec``.
Node identifiers are opaque strings; wherever an order is needed, ties
are broken lexicographically so results never depend on dict or set
iteration order.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Optional, Union


class NodeKind(str, Enum):
    PARTITIONABLE = "Partitionable"
    ATOMIC = "Atomic"


class Role(str, Enum):
    SHARED_ENCODER = "SharedEncoder"
    DECODER = "Decoder"
    ORDINARY = "Ordinary"


class GraphError(ValueError):
    """Base class for DAG validation and mutation failures."""


class CycleDetected(GraphError):
    def __init__(self, witness: list[str]):
        self.witness = list(witness)
        super().__init__("cycle detected: " + " -> ".join(self.witness))


class DanglingEdge(GraphError):
    def __init__(self, u: str, v: str):
        self.edge = (u, v)
        super().__init__(f"edge ({u!r}, {v!r}) references a missing node")


class NonPositiveDeadline(GraphError):
    pass


class EmptyDag(GraphError):
    pass


class MutationBreaksInvariant(GraphError):
    pass


@dataclass(frozen=True)
class NodeAttrs:
    """Per-node tuple: cost, memory, kind, MIMONet role, predicted release.

    ``enc_cost``/``dec_costs`` describe a refinable MIMONet stage; both are
    ``None`` for ordinary nodes.
    """

    wcet: int
    mem: float = 0.0
    kind: NodeKind = NodeKind.PARTITIONABLE
    role: Role = Role.ORDINARY
    next_release: int = 0
    encoder_ref: Optional[str] = None
    enc_cost: Optional[int] = None
    dec_costs: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "role", Role(self.role))
        if self.dec_costs is not None:
            object.__setattr__(self, "dec_costs", tuple(self.dec_costs))
        if self.wcet <= 0:
            raise GraphError(f"wcet must be positive, got {self.wcet}")
        if self.mem < 0:
            raise GraphError(f"mem must be non-negative, got {self.mem}")
        if self.next_release < 0:
            raise GraphError("next_release must be non-negative")
        if (self.encoder_ref is not None) != (self.role is Role.SHARED_ENCODER):
            raise GraphError("encoder_ref must be set exactly when role is SharedEncoder")
        if (self.enc_cost is None) != (self.dec_costs is None):
            raise GraphError("enc_cost and dec_costs must be given together")
        if self.dec_costs is not None:
            if not self.dec_costs:
                raise GraphError("dec_costs must hold at least one decoder")
            if self.enc_cost <= 0 or min(self.dec_costs) <= 0:
                raise GraphError("encoder/decoder costs must be positive")
            if self.enc_cost + max(self.dec_costs) > self.wcet:
                raise GraphError("enc_cost + max(dec_costs) exceeds wcet")

    @property
    def refinable(self) -> bool:
        return (
            self.dec_costs is not None
            and self.kind is NodeKind.PARTITIONABLE
            and self.role is Role.SHARED_ENCODER
        )


@dataclass(frozen=True, eq=False)
class DagSpec:
    """A released DAG instance ``(V, E, D)`` with arrival time ``a``."""

    id: str
    nodes: Mapping[str, NodeAttrs]
    edges: frozenset = field(default_factory=frozenset)
    deadline: int = 1
    arrival: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))

    def __eq__(self, other):
        if not isinstance(other, DagSpec):
            return NotImplemented
        return (
            self.id == other.id
            and self.nodes == other.nodes
            and self.edges == other.edges
            and self.deadline == other.deadline
            and self.arrival == other.arrival
        )

    def __repr__(self):
        return (
            f"DagSpec(id={self.id!r}, nodes={sorted(self.nodes)}, "
            f"edges={sorted(self.edges)}, deadline={self.deadline}, arrival={self.arrival})"
        )

    @cached_property
    def preds(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for u, v in sorted(self.edges):
            if v in out:
                out[v].append(u)
        return out

    @cached_property
    def succs(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for u, v in sorted(self.edges):
            if u in out:
                out[u].append(v)
        return out

    @property
    def sources(self) -> list[str]:
        return sorted(v for v, p in self.preds.items() if not p)

    @property
    def sinks(self) -> list[str]:
        return sorted(v for v, s in self.succs.items() if not s)

    def with_arrival(self, arrival: int, id: Optional[str] = None) -> "DagSpec":
        return DagSpec(id if id is not None else self.id, self.nodes, self.edges, self.deadline, arrival)


def _find_cycle(dag: DagSpec) -> Optional[list[str]]:
    color = {v: 0 for v in dag.nodes}
    parent: dict[str, str] = {}
    for root in sorted(dag.nodes):
        if color[root]:
            continue
        stack = [(root, iter(dag.succs[root]))]
        color[root] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[v] = 2
                stack.pop()
            elif color[nxt] == 1:
                path = [nxt]
                cur = v
                while cur != nxt:
                    path.append(cur)
                    cur = parent[cur]
                path.append(nxt)
                return path[::-1]
            elif color[nxt] == 0:
                color[nxt] = 1
                parent[nxt] = v
                stack.append((nxt, iter(dag.succs[nxt])))
    return None


def validate(dag: DagSpec) -> None:
    """Raise a ``GraphError`` subclass unless every DagSpec invariant holds."""
    for u, v in sorted(dag.edges):
        if u not in dag.nodes or v not in dag.nodes:
            raise DanglingEdge(u, v)
        if u == v:
            raise CycleDetected([u, u])
    if dag.deadline <= 0:
        raise NonPositiveDeadline(f"deadline must be positive, got {dag.deadline}")
    if not dag.nodes:
        raise EmptyDag(f"DAG {dag.id!r} has no nodes")
    cycle = _find_cycle(dag)
    if cycle is not None:
        raise CycleDetected(cycle)


def topological_order(dag: DagSpec) -> list[str]:
    """Kahn's algorithm; among ready nodes the smallest id goes first."""
    indeg = {v: len(p) for v, p in dag.preds.items()}
    ready = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in dag.succs[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != len(dag.nodes):
        raise CycleDetected(_find_cycle(dag) or [])
    return order


def _linear_order(dag: DagSpec) -> list[str]:
    preds, succs = dag.preds, dag.succs
    indeg = {v: len(p) for v, p in preds.items()}
    queue = deque(v for v, d in indeg.items() if d == 0)
    order = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for w in succs[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if len(order) != len(indeg):
        raise CycleDetected(_find_cycle(dag) or [])
    return order


def heights(dag: DagSpec) -> dict[str, int]:
    h: dict[str, int] = {}
    preds = dag.preds
    for v in _linear_order(dag):
        p = preds[v]
        h[v] = 1 + max(h[u] for u in p) if p else 0
    return h


def level_sets(dag: DagSpec) -> list[set[str]]:
    h = heights(dag)
    if not h:
        return []
    levels: list[set[str]] = [set() for _ in range(max(h.values()) + 1)]
    for v, hv in h.items():
        levels[hv].add(v)
    return levels


def critical_path_cost(dag: DagSpec, costs: Optional[Mapping[str, int]] = None) -> int:
    """Longest source-to-sink path cost, O(|V|+|E|)."""
    cost = costs if costs is not None else {v: a.wcet for v, a in dag.nodes.items()}
    finish: dict[str, int] = {}
    preds = dag.preds
    for v in _linear_order(dag):
        p = preds[v]
        finish[v] = cost[v] + (max(finish[u] for u in p) if p else 0)
    return max(finish.values(), default=0)


def predict_next_release(arrivals: list[int], period: Optional[int] = None) -> int:
    """Predicted next release: one period on for periodics, the last
    inter-arrival gap on for sporadics."""
    if not arrivals:
        return 0
    last = arrivals[-1]
    if period is not None:
        return last + period
    if len(arrivals) < 2:
        return last
    return last + (arrivals[-1] - arrivals[-2])


# --- mutations -------------------------------------------------------------


@dataclass(frozen=True)
class AddNode:
    node: str
    attrs: NodeAttrs
    incoming: tuple[str, ...] = ()
    outgoing: tuple[str, ...] = ()


@dataclass(frozen=True)
class RemoveNode:
    node: str


@dataclass(frozen=True)
class AddEdge:
    u: str
    v: str


@dataclass(frozen=True)
class RemoveEdge:
    u: str
    v: str


MutationOp = Union[AddNode, RemoveNode, AddEdge, RemoveEdge]


@dataclass(frozen=True)
class Mutation:
    at: int
    op: MutationOp
    target_dag: str


def apply_mutation(dag: DagSpec, m: Union[Mutation, MutationOp]) -> DagSpec:
    op = m.op if isinstance(m, Mutation) else m
    nodes = dict(dag.nodes)
    edges = set(dag.edges)
    if isinstance(op, AddNode):
        if op.node in nodes:
            raise MutationBreaksInvariant(f"node {op.node!r} already exists")
        for u in (*op.incoming, *op.outgoing):
            if u not in nodes:
                raise MutationBreaksInvariant(f"endpoint {u!r} does not exist")
        nodes[op.node] = op.attrs
        edges |= {(u, op.node) for u in op.incoming}
        edges |= {(op.node, w) for w in op.outgoing}
    elif isinstance(op, RemoveNode):
        if op.node not in nodes:
            raise MutationBreaksInvariant(f"node {op.node!r} does not exist")
        del nodes[op.node]
        edges = {e for e in edges if op.node not in e}
    elif isinstance(op, AddEdge):
        if op.u not in nodes or op.v not in nodes:
            raise MutationBreaksInvariant(f"edge ({op.u!r}, {op.v!r}) has a missing endpoint")
        if (op.u, op.v) in edges:
            raise MutationBreaksInvariant(f"edge ({op.u!r}, {op.v!r}) already exists")
        edges.add((op.u, op.v))
    elif isinstance(op, RemoveEdge):
        if (op.u, op.v) not in edges:
            raise MutationBreaksInvariant(f"edge ({op.u!r}, {op.v!r}) does not exist")
        edges.discard((op.u, op.v))
    else:
        raise TypeError(f"unknown mutation op {op!r}")
    out = DagSpec(dag.id, nodes, frozenset(edges), dag.deadline, dag.arrival)
    try:
        validate(out)
    except GraphError as exc:
        raise MutationBreaksInvariant(str(exc)) from exc
    return out


def inverse_mutation(dag: DagSpec, m: Mutation) -> Mutation:
    """The mutation that undoes ``m`` when applied to ``apply_mutation(dag, m)``."""
    op = m.op
    if isinstance(op, AddNode):
        inv: MutationOp = RemoveNode(op.node)
    elif isinstance(op, RemoveNode):
        inv = AddNode(
            op.node,
            dag.nodes[op.node],
            tuple(dag.preds[op.node]),
            tuple(dag.succs[op.node]),
        )
    elif isinstance(op, AddEdge):
        inv = RemoveEdge(op.u, op.v)
    else:
        inv = AddEdge(op.u, op.v)
    return replace(m, op=inv)


def make_dag(
    id: str,
    costs: Mapping[str, int],
    edges: Iterable[tuple[str, str]] = (),
    deadline: int = 1,
    arrival: int = 0,
) -> DagSpec:
    """Shorthand for DAGs of ordinary partitionable nodes."""
    return DagSpec(id, {v: NodeAttrs(wcet=c) for v, c in costs.items()}, frozenset(edges), deadline, arrival)
