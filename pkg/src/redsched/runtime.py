"""Dispatch-time machinery: handler FSMs, on-demand barriers, the EDF
ready queue, same-height batching and moving-average cost estimates."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import count
from typing import Any, Iterable, Optional

from .graph import DagSpec, Role, heights


class HState(str, Enum):
    READY = "Ready"
    RUNNING = "Running"
    IOWAIT = "IOWait"
    OOM = "OOM"
    DONE = "Done"


class HEvent(str, Enum):
    DISPATCH = "Dispatch"
    IO_START = "IoStart"
    IO_END = "IoEnd"
    MEM_FAIL = "MemFail"
    MEM_RECLAIM = "MemReclaim"
    FINISH = "Finish"


TRANSITIONS: dict[tuple[HState, HEvent], HState] = {
    (HState.READY, HEvent.DISPATCH): HState.RUNNING,
    (HState.RUNNING, HEvent.IO_START): HState.IOWAIT,
    (HState.RUNNING, HEvent.MEM_FAIL): HState.OOM,
    (HState.RUNNING, HEvent.FINISH): HState.DONE,
    (HState.IOWAIT, HEvent.IO_END): HState.RUNNING,
    (HState.IOWAIT, HEvent.FINISH): HState.DONE,
    (HState.OOM, HEvent.MEM_RECLAIM): HState.READY,
}


class IllegalTransition(RuntimeError):
    def __init__(self, state: HState, event: HEvent):
        self.state, self.event = state, event
        super().__init__(f"illegal transition: {state.value} --{event.value}-->")


@dataclass(frozen=True)
class HandlerState:
    node: str
    state: HState = HState.READY
    entered_at: int = 0


def fsm_step(h: HandlerState, event: HEvent, now: int) -> HandlerState:
    nxt = TRANSITIONS.get((HState(h.state), HEvent(event)))
    if nxt is None:
        raise IllegalTransition(HState(h.state), HEvent(event))
    return replace(h, state=nxt, entered_at=now)


# --- barriers --------------------------------------------------------------


class BarrierKind(str, Enum):
    LEVEL_COMPLETE = "LevelComplete"
    ENCODER_BROADCAST = "EncoderBroadcast"
    FSM_DONE = "FsmDone"
    # fixed-interval barrier used by the baselines without on-demand sync
    PERIODIC = "Periodic"


@dataclass(frozen=True)
class Barrier:
    kind: BarrierKind
    emitted_at: int
    dag: Optional[str] = None
    height: Optional[int] = None
    node: Optional[str] = None


class SyncState:
    """Per-instance level bookkeeping for the on-demand synchronizer."""

    def __init__(self):
        self._graphs: dict[str, DagSpec] = {}
        self._heights: dict[str, dict[str, int]] = {}
        self._level_size: dict[str, dict[int, int]] = {}
        self._done: dict[str, set[str]] = {}
        self._emitted: dict[str, set[int]] = {}

    def register(self, dag_id: str, dag: DagSpec) -> None:
        """(Re)load the graph of an instance, keeping its completed nodes."""
        h = heights(dag)
        self._graphs[dag_id] = dag
        self._heights[dag_id] = h
        sizes: dict[int, int] = {}
        for hv in h.values():
            sizes[hv] = sizes.get(hv, 0) + 1
        self._level_size[dag_id] = sizes
        done = self._done.setdefault(dag_id, set())
        done &= set(dag.nodes)

    def forget(self, dag_id: str) -> None:
        for table in (self._graphs, self._heights, self._level_size, self._done, self._emitted):
            table.pop(dag_id, None)

    def is_done(self, dag_id: str, node: str) -> bool:
        return node in self._done.get(dag_id, ())

    def level_done(self, dag_id: str, h: int) -> bool:
        hs = self._heights[dag_id]
        done = self._done[dag_id]
        return sum(1 for v in done if hs.get(v) == h) == self._level_size[dag_id].get(h, 0)


def emit_barriers(done_now: Iterable[tuple[str, str]], state: SyncState, now: int) -> list[Barrier]:
    """Barriers triggered by this cycle's Running->Done transitions.

    For every finished handler: an encoder broadcast when an encoder
    output is about to be consumed by a pending decoder, then the FSM
    completion barrier. A level barrier follows once the last node of a
    level has finished. Nothing is emitted for a cycle with no
    transitions.
    """
    out: list[Barrier] = []
    touched: list[tuple[str, int]] = []
    for dag_id, node in done_now:
        dag = state._graphs[dag_id]
        done = state._done[dag_id]
        done.add(node)
        attrs = dag.nodes.get(node)
        if attrs is not None and attrs.role is Role.SHARED_ENCODER:
            pending = [
                w for w in dag.succs[node] if dag.nodes[w].role is Role.DECODER and w not in done
            ]
            if pending:
                out.append(Barrier(BarrierKind.ENCODER_BROADCAST, now, dag_id, None, node))
        out.append(Barrier(BarrierKind.FSM_DONE, now, dag_id, None, node))
        h = state._heights[dag_id].get(node)
        if h is not None:
            touched.append((dag_id, h))
    for dag_id, h in touched:
        emitted = state._emitted.setdefault(dag_id, set())
        if h in emitted:
            continue
        if state.level_done(dag_id, h):
            emitted.add(h)
            out.append(Barrier(BarrierKind.LEVEL_COMPLETE, now, dag_id, h, None))
    return out


# --- cost estimation -------------------------------------------------------


class NonPositiveObservation(ValueError):
    pass


@dataclass
class CostEstimator:
    """Moving average over the last ``k`` observed durations per node,
    falling back to the offline WCET until something is observed."""

    k: int = 8
    fallback: dict[Any, int] = field(default_factory=dict)
    window: dict[Any, deque] = field(default_factory=dict)

    def estimate(self, node, fallback: Optional[int] = None) -> int:
        ring = self.window.get(node)
        if ring:
            return sum(ring) // len(ring)
        if fallback is not None:
            return fallback
        return self.fallback[node]

    def observe(self, node, observed: int) -> "CostEstimator":
        if observed <= 0:
            raise NonPositiveObservation(f"observed duration must be positive, got {observed}")
        ring = self.window.get(node)
        if ring is None:
            ring = self.window[node] = deque(maxlen=self.k)
        ring.append(observed)
        return self


def update_cost_estimate(est: CostEstimator, node, observed: int) -> CostEstimator:
    return est.observe(node, observed)


# --- ready queue -----------------------------------------------------------


class ReadyQueue:
    """Dispatchable units keyed by ``(absolute deadline, id)``.

    Keys may be updated in place; stale heap entries are skipped lazily.
    """

    def __init__(self, items: Iterable[tuple[int, str, Any]] = ()):
        self._live: dict[str, tuple[int, int, Any]] = {}
        self._heap: list[tuple[int, str, int]] = []
        self._gen = count()
        for deadline, uid, item in items:
            self.push(uid, deadline, item)

    def __len__(self) -> int:
        return len(self._live)

    def __contains__(self, uid: str) -> bool:
        return uid in self._live

    def push(self, uid: str, deadline: int, item: Any = None) -> None:
        g = next(self._gen)
        self._live[uid] = (deadline, g, item)
        heapq.heappush(self._heap, (deadline, uid, g))

    def remove(self, uid: str) -> Any:
        return self._live.pop(uid)[2]

    def deadline(self, uid: str) -> int:
        return self._live[uid][0]

    def item(self, uid: str) -> Any:
        return self._live[uid][2]

    def _clean(self) -> None:
        heap, live = self._heap, self._live
        while heap:
            d, uid, g = heap[0]
            cur = live.get(uid)
            if cur is not None and cur[1] == g:
                return
            heapq.heappop(heap)

    def peek(self) -> tuple[int, str, Any]:
        self._clean()
        d, uid, _ = self._heap[0]
        return d, uid, self._live[uid][2]

    def pop(self) -> tuple[int, str, Any]:
        d, uid, item = self.peek()
        del self._live[uid]
        heapq.heappop(self._heap)
        return d, uid, item

    def entries(self) -> list[tuple[int, str, Any]]:
        """Live entries in key order."""
        return sorted((d, uid, item) for uid, (d, _, item) in self._live.items())

    def copy(self) -> "ReadyQueue":
        return ReadyQueue(self.entries())


def edf_select(queue, free_slots: int) -> list:
    """Up to ``free_slots`` items with the smallest ``(deadline, id)`` keys.

    ``queue`` is a ``ReadyQueue`` (items returned, queue left untouched)
    or an iterable of ``(deadline, id, item)`` triples.
    """
    if free_slots <= 0:
        return []
    entries = queue.entries() if isinstance(queue, ReadyQueue) else sorted(queue, key=lambda e: (e[0], e[1]))
    return [item if item is not None else uid for _, uid, item in entries[:free_slots]]


def batch_same_height(units: Iterable[Any]) -> list[list[Any]]:
    """Group units by their ``height`` label, lowest height first, keeping
    the incoming (EDF) order inside each group."""
    groups: dict[int, list[Any]] = {}
    for u in units:
        groups.setdefault(u.height, []).append(u)
    return [groups[h] for h in sorted(groups)]
