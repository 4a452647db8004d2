"""MIMONet stage refinement and shared-encoder merging.

A refinable stage is a node whose ``NodeAttrs`` carry an encoder cost and
one cost per task decoder. Refinement replaces it with one encoder node
feeding ``q`` decoder nodes; ``dynamic_merge`` coalesces ready encoder
sub-tasks that use the same physical weights and are released close
together, so the encoder runs once for all of them.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .graph import DagSpec, GraphError, NodeAttrs, NodeKind, Role, critical_path_cost, topological_order


class NotRefinable(GraphError):
    pass


def encoder_id(stage: str) -> str:
    return f"{stage}.enc"


def decoder_id(stage: str, j: int) -> str:
    return f"{stage}.dec{j}"


@dataclass(frozen=True)
class RefinedStage:
    origin: str
    encoder: tuple[str, int]
    decoders: tuple[tuple[str, int], ...]

    @property
    def q(self) -> int:
        return len(self.decoders)

    @property
    def dec_costs(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.decoders)


def describe_stage(dag: DagSpec, stage: str) -> RefinedStage:
    attrs = dag.nodes.get(stage)
    if attrs is None or not attrs.refinable:
        raise NotRefinable(f"node {stage!r} is not a refinable MIMONet stage")
    return RefinedStage(
        origin=stage,
        encoder=(encoder_id(stage), attrs.enc_cost),
        decoders=tuple((decoder_id(stage, j), c) for j, c in enumerate(attrs.dec_costs)),
    )


def refine(dag: DagSpec, stage: str) -> DagSpec:
    """Replace ``stage`` by an encoder node and its decoder nodes.

    Predecessors of the stage feed the encoder, every decoder feeds every
    successor of the stage. The encoder keeps the stage's memory footprint
    (it owns the shared weights); decoders are accounted at zero memory.
    """
    rs = describe_stage(dag, stage)
    attrs = dag.nodes[stage]
    new_ids = [rs.encoder[0]] + [d for d, _ in rs.decoders]
    clash = [v for v in new_ids if v in dag.nodes]
    if clash:
        raise NotRefinable(f"refined node id {clash[0]!r} already present")
    nodes = {v: a for v, a in dag.nodes.items() if v != stage}
    enc, enc_cost = rs.encoder
    nodes[enc] = NodeAttrs(
        wcet=enc_cost,
        mem=attrs.mem,
        kind=NodeKind.PARTITIONABLE,
        role=Role.SHARED_ENCODER,
        next_release=attrs.next_release,
        encoder_ref=attrs.encoder_ref,
    )
    for d, c in rs.decoders:
        nodes[d] = NodeAttrs(wcet=c, role=Role.DECODER, next_release=attrs.next_release)
    edges = {e for e in dag.edges if stage not in e}
    edges |= {(u, enc) for u in dag.preds[stage]}
    for d, _ in rs.decoders:
        edges.add((enc, d))
        edges |= {(d, w) for w in dag.succs[stage]}
    return DagSpec(dag.id, nodes, frozenset(edges), dag.deadline, dag.arrival)


def refinable_stages(dag: DagSpec) -> list[str]:
    return [v for v in topological_order(dag) if dag.nodes[v].refinable]


def refine_all(dag: DagSpec) -> DagSpec:
    out = dag
    for stage in refinable_stages(dag):
        out = refine(out, stage)
    return out


def lpt_makespan(costs: Sequence[int], machines: int) -> int:
    """Longest-processing-time-first list schedule makespan."""
    if machines < 1:
        raise ValueError("need at least one machine")
    loads = [0] * min(machines, max(1, len(costs)))
    heapq.heapify(loads)
    for c in sorted(costs, reverse=True):
        heapq.heappush(loads, heapq.heappop(loads) + c)
    return max(loads) if costs else 0


def serialization_margin(stage, rho: float) -> int:
    """Extra path cost when the stage's decoders cannot all run at once.

    ``stage`` is a ``RefinedStage`` or a plain sequence of decoder costs.
    Zero when ``rho >= q``; otherwise the LPT makespan of the decoders on
    ``floor(rho)`` slots minus the longest decoder, which never exceeds
    the full serialisation gap ``sum - max``.
    """
    decs = list(stage.dec_costs if isinstance(stage, RefinedStage) else stage)
    if not decs:
        raise ValueError("stage has no decoders")
    if rho < 1:
        raise ValueError("rho must be >= 1")
    if rho >= len(decs):
        return 0
    span = lpt_makespan(decs, math.floor(rho))
    return min(span - max(decs), sum(decs) - max(decs))


def refined_path_cost(dag: DagSpec, rho: float) -> int:
    """Critical path of ``dag`` with every refinable stage costed as
    encoder + longest decoder + serialisation margin at ``rho``."""
    costs = {}
    for v, a in dag.nodes.items():
        if a.refinable:
            costs[v] = a.enc_cost + max(a.dec_costs) + serialization_margin(a.dec_costs, rho)
        else:
            costs[v] = a.wcet
    return critical_path_cost(dag, costs)


# --- merging -------------------------------------------------------------


@dataclass(frozen=True)
class SubtaskInstance:
    """A ready sub-task as seen by the merge pass."""

    id: str
    encoder_ref: Optional[str]
    release: int
    subdeadline: int
    height: int = 0


@dataclass(frozen=True)
class MergeUnit:
    members: tuple[str, ...]
    shared_encoder: Optional[str]
    unit_deadline: int
    encoder_executions: int = 1

    @property
    def id(self) -> str:
        return "+".join(self.members)


def dynamic_merge(frontier: Iterable[SubtaskInstance], gamma: int) -> list[MergeUnit]:
    """Group frontier sub-tasks that share encoder weights and height and
    whose releases fall inside one ``gamma`` window.

    Each group is swept in release order; the earliest member anchors the
    window, so pairwise skew inside a unit never exceeds ``gamma``.
    Sub-tasks without an encoder become singleton units with no encoder
    execution.
    """
    groups: dict[tuple[str, int], list[SubtaskInstance]] = {}
    units: list[MergeUnit] = []
    for s in frontier:
        if s.encoder_ref is None:
            units.append(MergeUnit((s.id,), None, s.subdeadline, 0))
        else:
            groups.setdefault((s.encoder_ref, s.height), []).append(s)
    for (enc, _), members in sorted(groups.items()):
        members.sort(key=lambda s: (s.release, s.id))
        window: list[SubtaskInstance] = []
        for s in members:
            if window and s.release - window[0].release > gamma:
                units.append(_close(window, enc))
                window = []
            window.append(s)
        if window:
            units.append(_close(window, enc))
    units.sort(key=lambda u: (u.unit_deadline, u.id))
    return units


def _close(window: list[SubtaskInstance], enc: str) -> MergeUnit:
    ids = tuple(sorted(s.id for s in window))
    return MergeUnit(ids, enc, min(s.subdeadline for s in window), 1)
