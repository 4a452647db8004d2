"""Per-instance outcomes, run summaries and cross-variant comparison."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .simulator import BARRIER, DISPATCH, DROP, FINISH, OVERLOAD, RELEASE, REQUEUE, SimTrace, parse_extra
from .timeunits import NS_PER_S


def qoe_score(exec_time: float, slack: float, lam: float = 1.0) -> float:
    """``1 / (1 + e**lam * max(0, exec_time - slack))`` with the overrun
    taken in seconds; inputs are ns."""
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    if exec_time < 0:
        raise ValueError("execution time must be >= 0")
    overrun = max(0.0, (exec_time - slack) / NS_PER_S)
    if overrun == 0.0:
        return 1.0
    return 1.0 / (1.0 + math.exp(lam) * overrun)


class Status(str, Enum):
    MET = "Met"
    MISSED = "Missed"
    DROPPED = "Dropped"


@dataclass(frozen=True)
class TaskOutcome:
    dag_id: str
    instance: str
    release: int
    start: Optional[int]
    finish: Optional[int]
    deadline: int
    status: Status

    @property
    def response_time(self) -> Optional[int]:
        return None if self.finish is None else self.finish - self.release


class IncompleteTrace(ValueError):
    pass


class MismatchedExperiment(ValueError):
    pass


def outcomes(trace: SimTrace) -> list[TaskOutcome]:
    """Rebuild one outcome per released instance."""
    release: dict[str, tuple[int, int, str]] = {}
    start: dict[str, int] = {}
    finish: dict[str, int] = {}
    dropped: set[str] = set()
    for e in trace.events:
        if e.kind == RELEASE:
            f = e.fields
            release[e.dag_id] = (e.time, int(f["deadline"]), f.get("template", e.dag_id.split("#")[0]))
        elif e.kind == DISPATCH:
            start.setdefault(e.dag_id, e.time)
        elif e.kind == FINISH:
            finish[e.dag_id] = max(finish.get(e.dag_id, e.time), e.time)
        elif e.kind == DROP and e.fields.get("reason") == "Burst":
            dropped.add(e.dag_id)
    out = []
    for iid, (rel, dl, tid) in release.items():
        if iid in dropped:
            out.append(TaskOutcome(tid, iid, rel, start.get(iid), None, dl, Status.DROPPED))
            continue
        if iid not in finish:
            raise IncompleteTrace(f"instance {iid!r} neither finished nor dropped")
        fin = finish[iid]
        status = Status.MET if fin <= dl else Status.MISSED
        out.append(TaskOutcome(tid, iid, rel, start.get(iid), fin, dl, status))
    return out


@dataclass(frozen=True)
class RunSummary:
    n_released: int
    n_met: int
    n_missed: int
    n_dropped: int
    mean_response: float
    p50: float
    p95: float
    p99: float
    miss_drop_rate: float
    qoe: float
    barrier_count: int
    encoder_executions: int
    drops_by_reason: Mapping[str, int] = field(default_factory=dict)
    hi_crit_instances: tuple[str, ...] = ()
    hi_crit_met_rate: float = 1.0
    variant: Optional[str] = None
    seed: Optional[int] = None


def summarize(trace: SimTrace, lam: float = 1.0) -> RunSummary:
    outs = outcomes(trace)
    by_id = {o.instance: o for o in outs}
    done = [o for o in outs if o.status is not Status.DROPPED]
    resp = np.array([o.response_time for o in done], dtype=float)
    if resp.size:
        p50, p95, p99 = (float(x) for x in np.percentile(resp, [50, 95, 99]))
        mean = float(resp.mean())
    else:
        p50 = p95 = p99 = mean = math.nan
    qoes = [qoe_score(o.finish - o.start, o.deadline - o.start, lam) for o in done]
    n_met = sum(o.status is Status.MET for o in outs)
    n_missed = sum(o.status is Status.MISSED for o in outs)
    n_dropped = len(outs) - n_met - n_missed
    drops: dict[str, set[str]] = defaultdict(set)
    enc_units: set[tuple[int, str]] = set()
    bounced: set[tuple[int, str]] = set()
    hi: set[str] = set()
    barriers = 0
    for e in trace.events:
        if e.kind == BARRIER:
            barriers += 1
        elif e.kind == DISPATCH:
            f = e.fields
            if f.get("enc") == "1":
                enc_units.add((e.time, f["unit"]))
        elif e.kind == REQUEUE:
            bounced.add((e.time, f"{e.dag_id}/{e.node_id}"))
        elif e.kind == DROP:
            drops[e.fields.get("reason", "?")].add(e.dag_id)
        elif e.kind == OVERLOAD:
            hi.update(x for x in e.fields.get("hi", "").split(",") if x)
    enc_units = {(t, u) for t, u in enc_units if not any((t, m) in bounced for m in u.split("+"))}
    hi_sorted = tuple(sorted(hi))
    hi_rate = (
        sum(by_id[i].status is Status.MET for i in hi_sorted if i in by_id) / len(hi_sorted) if hi_sorted else 1.0
    )
    return RunSummary(
        n_released=len(outs),
        n_met=n_met,
        n_missed=n_missed,
        n_dropped=n_dropped,
        mean_response=mean,
        p50=p50,
        p95=p95,
        p99=p99,
        miss_drop_rate=(n_missed + n_dropped) / len(outs) if outs else 0.0,
        qoe=float(np.mean(qoes)) if qoes else math.nan,
        barrier_count=barriers,
        encoder_executions=len(enc_units),
        drops_by_reason={k: len(v) for k, v in sorted(drops.items())},
        hi_crit_instances=hi_sorted,
        hi_crit_met_rate=hi_rate,
        variant=trace.variant,
        seed=trace.seed,
    )


def flagged_instances(trace: SimTrace, dropping_only: bool = True) -> tuple[str, ...]:
    """Instances marked highly critical at overload ticks; with
    ``dropping_only`` just the ticks at which something was shed."""
    out: set[str] = set()
    for e in trace.events:
        if e.kind != OVERLOAD:
            continue
        f = e.fields
        if dropping_only and f.get("dropped", "0") == "0":
            continue
        out.update(x for x in f.get("hi", "").split(",") if x)
    return tuple(sorted(out))


def met_rate(trace: SimTrace, instances: Iterable[str]) -> float:
    """Fraction of ``instances`` that finished by their deadline (1.0 for
    an empty set)."""
    ids = set(instances)
    if not ids:
        return 1.0
    by_id = {o.instance: o for o in outcomes(trace)}
    return sum(by_id[i].status is Status.MET for i in ids if i in by_id) / len(ids)


# --- comparison ------------------------------------------------------------

COMPARED = ("miss_drop_rate", "mean_response", "p99", "qoe", "barrier_count", "encoder_executions")
# metrics where a larger value is the better one
_HIGHER_BETTER = {"qoe"}


@dataclass(frozen=True)
class PairComparison:
    a: str
    b: str
    n_seeds: int
    deltas: Mapping[str, float]
    win_fraction: float


@dataclass(frozen=True)
class ComparisonReport:
    variants: tuple[str, ...]
    pairs: tuple[PairComparison, ...]

    def rows(self) -> list[dict]:
        out = []
        for p in self.pairs:
            row = {"a": p.a, "b": p.b, "n_seeds": p.n_seeds, "a_wins_miss_rate": p.win_fraction}
            row.update({f"delta_{k}": v for k, v in p.deltas.items()})
            out.append(row)
        return out


def _mean(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def compare(summaries: Mapping[str, Sequence[RunSummary]]) -> ComparisonReport:
    """Mean metric differences ``a - b`` for every variant pair, plus the
    fraction of paired seeds on which ``a`` has the strictly lower
    miss/drop rate."""
    names = list(summaries)
    runs = {k: list(v) for k, v in summaries.items()}
    lengths = {len(v) for v in runs.values()}
    if len(lengths) > 1:
        raise MismatchedExperiment("variants were run on different numbers of seeds")
    seed_sets = {tuple(s.seed for s in v) for v in runs.values()}
    if len(seed_sets) > 1:
        raise MismatchedExperiment("variants were run on different seeds")
    pairs = []
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ra, rb = runs[a], runs[b]
            deltas = {k: _mean(getattr(x, k) - getattr(y, k) for x, y in zip(ra, rb)) for k in COMPARED}
            n = len(ra)
            wins = sum(x.miss_drop_rate < y.miss_drop_rate for x, y in zip(ra, rb))
            pairs.append(PairComparison(a, b, n, deltas, wins / n if n else math.nan))
    return ComparisonReport(tuple(names), tuple(pairs))


# --- CSV -------------------------------------------------------------------

OUTCOME_COLUMNS = ("dag_id", "instance", "release_ns", "start_ns", "finish_ns", "deadline_ns", "status", "response_ns")
SUMMARY_COLUMNS = (
    "variant",
    "seed",
    "n_released",
    "n_met",
    "n_missed",
    "n_dropped",
    "miss_drop_rate",
    "mean_response_ns",
    "p50_ns",
    "p95_ns",
    "p99_ns",
    "qoe",
    "barrier_count",
    "encoder_executions",
    "hi_crit_met_rate",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(round(v, 9))
    return str(v)


def _write(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def outcomes_csv(outs: Iterable[TaskOutcome]) -> str:
    return _write(
        OUTCOME_COLUMNS,
        (
            (o.dag_id, o.instance, o.release, o.start, o.finish, o.deadline, o.status.value, o.response_time)
            for o in outs
        ),
    )


def summary_csv(summaries: Iterable[RunSummary]) -> str:
    return _write(
        SUMMARY_COLUMNS,
        (
            (
                s.variant,
                s.seed,
                s.n_released,
                s.n_met,
                s.n_missed,
                s.n_dropped,
                s.miss_drop_rate,
                s.mean_response,
                s.p50,
                s.p95,
                s.p99,
                s.qoe,
                s.barrier_count,
                s.encoder_executions,
                s.hi_crit_met_rate,
            )
            for s in summaries
        ),
    )


def read_summary_csv(text: str) -> list[RunSummary]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):

        def f(k):
            return float(row[k]) if row[k] != "" else math.nan

        out.append(
            RunSummary(
                n_released=int(row["n_released"]),
                n_met=int(row["n_met"]),
                n_missed=int(row["n_missed"]),
                n_dropped=int(row["n_dropped"]),
                mean_response=f("mean_response_ns"),
                p50=f("p50_ns"),
                p95=f("p95_ns"),
                p99=f("p99_ns"),
                miss_drop_rate=f("miss_drop_rate"),
                qoe=f("qoe"),
                barrier_count=int(row["barrier_count"]),
                encoder_executions=int(row["encoder_executions"]),
                hi_crit_met_rate=f("hi_crit_met_rate"),
                variant=row["variant"],
                seed=int(row["seed"]),
            )
        )
    return out


def comparison_csv(report: ComparisonReport) -> str:
    cols = ["a", "b", "n_seeds", "a_wins_miss_rate"] + [f"delta_{k}" for k in COMPARED]
    return _write(cols, ([r[c] for c in cols] for r in report.rows()))
