"""Proportional intermediate deadlines, residual reassignment, per-level
capacity checks and contention-aware deadlines for atomic nodes.

Shares are computed with exact integer arithmetic: the cumulative bound
of level ``h`` is ``floor(budget * prefix_cost(h) / total_cost)`` and each
level share is the difference of consecutive cumulative bounds. The last
cumulative bound is therefore exactly ``budget``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

from .graph import DagSpec, NodeAttrs, NodeKind, heights

if TYPE_CHECKING:
    from .simulator import ExecModel, InterferenceWindow, PlatformModel


class DeadlineError(ValueError):
    pass


class ZeroTotalCost(DeadlineError):
    pass


class MissingCost(DeadlineError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"no cost estimate for node {node!r}")


class BudgetExhausted(DeadlineError):
    pass


class NotAtomic(DeadlineError):
    pass


class NoProfile(DeadlineError):
    def __init__(self, node: str, platform: str):
        self.node, self.platform = node, platform
        super().__init__(f"no contention profile for node {node!r} on platform {platform!r}")


class NodeNotFound(DeadlineError):
    pass


@dataclass
class DeadlineAssignment:
    level_shares: list[int]
    node_subdeadlines: dict[str, int]
    basis_costs: dict[str, int]
    node_levels: dict[str, int] = field(default_factory=dict)
    origin: int = 0
    budget: int = 0


def _level_costs(dag: DagSpec, costs: Mapping[str, int]) -> tuple[dict[str, int], list[int]]:
    h = heights(dag)
    n_levels = max(h.values()) + 1 if h else 0
    level_cost = [0] * n_levels
    for v, hv in h.items():
        if v not in costs:
            raise MissingCost(v)
        c = costs[v]
        if c < 0:
            raise DeadlineError(f"negative cost for node {v!r}")
        level_cost[hv] += c
    return h, level_cost


def exact_level_shares(dag: DagSpec, budget, costs: Optional[Mapping[str, int]] = None) -> list[Fraction]:
    """Unrounded level shares as exact rationals."""
    costs = costs if costs is not None else {v: a.wcet for v, a in dag.nodes.items()}
    _, level_cost = _level_costs(dag, costs)
    total = sum(level_cost)
    if total == 0:
        raise ZeroTotalCost(f"DAG {dag.id!r} has zero total cost")
    return [Fraction(budget) * c / total for c in level_cost]


def proportional_assign(
    dag: DagSpec,
    budget: int,
    costs: Optional[Mapping[str, int]] = None,
    release_origin: Optional[int] = None,
) -> DeadlineAssignment:
    if budget <= 0:
        raise DeadlineError(f"budget must be positive, got {budget}")
    costs = costs if costs is not None else {v: a.wcet for v, a in dag.nodes.items()}
    origin = dag.arrival if release_origin is None else release_origin
    h, level_cost = _level_costs(dag, costs)
    total = sum(level_cost)
    if total == 0:
        raise ZeroTotalCost(f"DAG {dag.id!r} has zero total cost")
    cumulative = []
    prefix = 0
    for c in level_cost:
        prefix += c
        cumulative.append(budget * prefix // total)
    shares = [cumulative[0]] + [b - a for a, b in zip(cumulative, cumulative[1:])] if cumulative else []
    sub = {v: origin + cumulative[hv] for v, hv in h.items()}
    return DeadlineAssignment(
        level_shares=shares,
        node_subdeadlines=sub,
        basis_costs={v: costs[v] for v in h},
        node_levels=h,
        origin=origin,
        budget=budget,
    )


def _estimate(observed, node: str, fallback: int) -> int:
    if observed is None:
        return fallback
    if hasattr(observed, "estimate"):
        return observed.estimate(node, fallback)
    return observed.get(node, fallback)


def reassign_residual(
    dag: DagSpec,
    completed: Iterable[str],
    elapsed: int,
    budget: int,
    observed=None,
    running: Optional[Mapping[str, int]] = None,
) -> DeadlineAssignment:
    """Re-apply the proportional rule to the not-yet-completed sub-DAG.

    ``observed`` supplies cost estimates (a ``CostEstimator`` or a plain
    mapping); ``running`` maps in-flight nodes to the time they have
    already run, which is deducted from their estimate (floor 0).
    """
    done = set(completed)
    for v in done:
        if v not in dag.nodes:
            raise DeadlineError(f"completed node {v!r} is not in the DAG")
        if any(u not in done for u in dag.preds[v]):
            raise DeadlineError("completed set is not closed under predecessors")
    if elapsed >= budget:
        raise BudgetExhausted(f"elapsed {elapsed} >= budget {budget}")
    residual_nodes = {v: a for v, a in dag.nodes.items() if v not in done}
    origin = dag.arrival + elapsed
    if not residual_nodes:
        return DeadlineAssignment([], {}, {}, {}, origin, budget - elapsed)
    residual = DagSpec(
        dag.id,
        residual_nodes,
        frozenset(e for e in dag.edges if e[0] not in done and e[1] not in done),
        dag.deadline,
        dag.arrival,
    )
    running = running or {}
    costs = {}
    for v, attrs in residual_nodes.items():
        est = _estimate(observed, v, attrs.wcet)
        costs[v] = max(0, est - running.get(v, 0))
    return proportional_assign(residual, budget - elapsed, costs, origin)


# --- capacity ------------------------------------------------------------


@dataclass(frozen=True)
class LevelCapacity:
    level: int
    work: int
    bound: int
    graham_safe: bool
    paper_safe: bool


@dataclass
class CapacityReport:
    per_level: list[LevelCapacity]

    @property
    def paper_safe(self) -> bool:
        return all(lv.paper_safe for lv in self.per_level)

    @property
    def graham_safe(self) -> bool:
        return all(lv.graham_safe for lv in self.per_level)


def capacity_check(dag: DagSpec, assignment: DeadlineAssignment, rho: float) -> CapacityReport:
    """Per-level capacity flags.

    ``paper_safe``: work/rho <= share. ``graham_safe``: the list-scheduling
    makespan bound work/rho + (1 - 1/rho) * max cost <= share. An infinite
    rho takes the limit of both: max cost <= share.
    """
    if rho < 1:
        raise DeadlineError("rho must be >= 1")
    missing = set(dag.nodes) - set(assignment.basis_costs)
    if missing:
        raise MissingCost(sorted(missing)[0])
    levels = assignment.node_levels or heights(dag)
    n = len(assignment.level_shares)
    work = [0] * n
    biggest = [0] * n
    for v, hv in levels.items():
        c = assignment.basis_costs[v]
        work[hv] += c
        biggest[hv] = max(biggest[hv], c)

    out = []
    for h in range(n):
        bound = assignment.level_shares[h]
        if math.isinf(rho):
            paper = True
            graham = biggest[h] <= bound
        else:
            r = Fraction(rho)
            paper = Fraction(work[h]) / r <= bound
            graham = Fraction(work[h]) / r + (1 - 1 / r) * biggest[h] <= bound
        out.append(LevelCapacity(h, work[h], bound, graham, paper))
    return CapacityReport(out)


# --- atomic nodes ----------------------------------------------------------


@dataclass
class ContentionTable:
    """Profiled worst extra delay per ``(node_id, platform_id)``, in ns."""

    entries: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        for key, delta in self.entries.items():
            if delta < 0:
                raise DeadlineError(f"negative contention delay for {key}")

    def get(self, node: str, platform: str) -> int:
        try:
            return self.entries[(node, platform)]
        except KeyError:
            raise NoProfile(node, platform) from None

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def atomic_deadline(node_id: str, attrs: NodeAttrs, table: ContentionTable, platform: str) -> int:
    """Deadline of a non-partitionable node: isolated WCET plus contention delay."""
    if attrs.kind is not NodeKind.ATOMIC:
        raise NotAtomic(f"node {node_id!r} is not atomic")
    return attrs.wcet + table.get(node_id, platform)


def _related(dag: DagSpec, target: str) -> set[str]:
    """Ancestors and descendants of ``target``."""
    out: set[str] = set()
    for adj in (dag.preds, dag.succs):
        stack = list(adj[target])
        while stack:
            v = stack.pop()
            if v not in out:
                out.add(v)
                stack.extend(adj[v])
    return out


def heaviest_corunners(
    node: str,
    workload: Sequence[DagSpec],
    max_size: int,
    dag_id: Optional[str] = None,
) -> tuple[tuple[str, str], ...]:
    """Co-runner set for contention profiling.

    Among subsets of at most ``max_size`` nodes that can run at the same
    time as ``node`` and as each other, pick the one with the largest
    total memory, then the largest total WCET, then the smallest sorted
    ``(dag_id, node_id)`` tuple.
    """
    home = _locate(node, workload, dag_id)
    candidates = []
    related_to: dict[tuple[str, str], set[str]] = {}
    for dag in workload:
        for v in sorted(dag.nodes):
            if dag.id == home.id and (v == node or v in _related(home, node)):
                continue
            candidates.append((dag.id, v))
    by_id = {d.id: d for d in workload}

    def related(a, b):
        if a[0] != b[0]:
            return False
        key = a
        if key not in related_to:
            related_to[key] = _related(by_id[a[0]], a[1])
        return b[1] in related_to[key]

    best_key = None
    best: tuple[tuple[str, str], ...] = ()
    for size in range(1, min(max_size, len(candidates)) + 1):
        for combo in itertools.combinations(candidates, size):
            if any(related(a, b) for a, b in itertools.combinations(combo, 2)):
                continue
            mem = sum(by_id[d].nodes[v].mem for d, v in combo)
            cost = sum(by_id[d].nodes[v].wcet for d, v in combo)
            key = (-mem, -cost, tuple(sorted(combo)))
            if best_key is None or key < best_key:
                best_key, best = key, tuple(sorted(combo))
    return best


def _locate(node: str, workload: Sequence[DagSpec], dag_id: Optional[str]) -> DagSpec:
    for dag in workload:
        if (dag_id is None or dag.id == dag_id) and node in dag.nodes:
            return dag
    raise NodeNotFound(f"node {node!r} not found in workload")


def profile_contention(
    node: str,
    workload: Sequence[DagSpec],
    platform: "PlatformModel",
    seeds: Sequence[int],
    *,
    dag_id: Optional[str] = None,
    interference: Sequence["InterferenceWindow"] = (),
    exec_model: Optional["ExecModel"] = None,
) -> int:
    """Profiled contention delay for ``node`` in ns.

    The node is co-run in the simulator against its heaviest co-runner mix,
    under the heaviest interference level present in ``interference``, once
    per seed. Returns the largest observed completion time minus the
    isolated WCET, clipped at zero.
    """
    from . import simulator as sim

    home = _locate(node, workload, dag_id)
    attrs = home.nodes[node]
    slots = math.floor(platform.rho) + (1 if platform.rho % 1 else 0)
    corunners = heaviest_corunners(node, workload, slots - 1, home.id)
    by_id = {d.id: d for d in workload}

    def single(tag: str, v: str, a: NodeAttrs) -> DagSpec:
        # profiled in isolation from its own structure: strip refinement data
        plain = NodeAttrs(wcet=a.wcet, mem=a.mem, kind=a.kind)
        return DagSpec(tag, {v: plain}, frozenset(), deadline=max(a.wcet * 100, 1), arrival=0)

    dags = [single("__target", node, attrs)]
    for i, (d, v) in enumerate(corunners):
        dags.append(single(f"__co{i}", v, by_id[d].nodes[v]))
    slow = max((w.slowdown for w in interference), default=1.0)
    horizon = sum(a.wcet for a in (dg.nodes[next(iter(dg.nodes))] for dg in dags))
    windows = []
    if slow > 1.0:
        windows = [sim.InterferenceWindow(0, max(1, int(horizon * slow * 2) + 1), slow)]
    model = exec_model or sim.ExecModel()
    worst = 0
    for seed in seeds:
        wl = sim.Workload(
            templates=[sim.DagTemplate(d, arrivals=(0,)) for d in dags],
            interference=windows,
        )
        cfg = sim.SchedulerConfig()
        trace = sim.run(wl, platform, sim.SchedulerVariant.EDF, cfg, seed, exec_model=model)
        for ev in trace.events:
            if ev.kind == "Finish" and ev.dag_id.startswith("__target"):
                worst = max(worst, ev.time)
    return max(0, worst - attrs.wcet)
