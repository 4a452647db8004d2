"""Health monitoring and criticality-ordered shedding under sustained overload."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .runtime import ReadyQueue
from .timeunits import ms


@dataclass(frozen=True)
class BurstConfig:
    theta_u: float = 0.90
    q_max: int = 8
    w: int = 3
    tick: int = ms(5)

    def __post_init__(self):
        if not 0 < self.theta_u <= 1:
            raise ValueError("theta_u must lie in (0, 1]")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")
        if self.w < 1:
            raise ValueError("w must be >= 1")
        if self.tick <= 0:
            raise ValueError("tick must be positive")


@dataclass(frozen=True)
class HealthSample:
    """System state observed at one monitor tick.

    ``busy_ns`` is the committed work of running units over the next tick
    and ``capacity_ns`` the slot time available in it; both feed the
    projected-utilisation stop rule of ``proactive_drop``.
    """

    tick: int
    u_gpu: float
    q_len: int
    slack: Mapping[str, int] = field(default_factory=dict)
    busy_ns: int = 0
    capacity_ns: int = 0

    def __post_init__(self):
        if not 0.0 <= self.u_gpu <= 1.0:
            raise ValueError("u_gpu must lie in [0, 1]")
        if self.q_len < 0:
            raise ValueError("q_len must be >= 0")


def is_hot(s: HealthSample, cfg: BurstConfig) -> bool:
    return s.u_gpu > cfg.theta_u or s.q_len > cfg.q_max


def detect_overload(history: Sequence[HealthSample], cfg: BurstConfig) -> bool:
    """True when ``cfg.w`` consecutive samples are each over a threshold."""
    if not history:
        raise ValueError("history must hold at least one sample")
    run = 0
    for s in history:
        run = run + 1 if is_hot(s, cfg) else 0
        if run >= cfg.w:
            return True
    return False


class NonPositiveDeadlineSpan(ValueError):
    pass


def criticality_score(slack: float, deadline_span: float) -> float:
    if deadline_span <= 0:
        raise NonPositiveDeadlineSpan(f"deadline span must be positive, got {deadline_span}")
    return min(1.0, max(0.0, 1.0 - slack / deadline_span))


@dataclass(frozen=True)
class DropCandidate:
    """What the shedder needs to know about a queued unit."""

    instance: str
    est_cost: int = 0


def _projected_u(q: ReadyQueue, health: HealthSample, cfg: BurstConfig) -> float:
    if health.capacity_ns <= 0:
        return health.u_gpu
    queued = 0
    for _, _, item in q.entries():
        est = getattr(item, "est_cost", 0) or 0
        queued += min(est, cfg.tick)
    admitted = min(queued, max(0, health.capacity_ns - health.busy_ns))
    return min(1.0, (health.busy_ns + admitted) / health.capacity_ns)


def proactive_drop(
    queue: ReadyQueue,
    scores: Mapping[str, float],
    cfg: BurstConfig,
    health: HealthSample,
    max_drops: Optional[int] = None,
) -> tuple[ReadyQueue, list[str]]:
    """Shed the least critical queued work.

    Units are picked by ascending score, then largest slack, then id.
    Picking a unit drops every queued unit of the same DAG instance. At
    most ``ceil(q_len - q_max) + 1`` instances go per call, so a queue
    shorter than ``q_max`` sheds nothing whatever the utilisation. Stops as soon as the queue is
    short enough and projected utilisation is back under the threshold,
    or when only fully critical units remain. Returns the reduced queue
    and the dropped unit ids in drop order.
    """
    q = queue.copy()
    if max_drops is None:
        max_drops = math.ceil(len(q) - cfg.q_max) + 1
    dropped: list[str] = []
    instances = 0
    while instances < max_drops and len(q):
        if len(q) <= cfg.q_max and _projected_u(q, health, cfg) <= cfg.theta_u:
            break
        candidates = [uid for _, uid, _ in q.entries() if scores.get(uid, 1.0) < 1.0]
        if not candidates:
            break
        victim = min(candidates, key=lambda u: (scores[u], -health.slack.get(u, 0), u))
        inst = getattr(q.item(victim), "instance", None)
        group = [victim]
        if inst is not None:
            group += [uid for _, uid, item in q.entries() if uid != victim and getattr(item, "instance", None) == inst]
        for uid in group:
            q.remove(uid)
            dropped.append(uid)
        instances += 1
    return q, dropped
