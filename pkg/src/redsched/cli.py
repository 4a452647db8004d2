"""Command-line entry point: validate, generate, run, compare and profile.

Experiment outputs are written atomically (temp file then rename) so an
interrupted run never leaves a truncated CSV behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .deadlines import DeadlineError, profile_contention
from .metrics import (
    IncompleteTrace,
    MismatchedExperiment,
    RunSummary,
    compare,
    comparison_csv,
    outcomes,
    outcomes_csv,
    read_summary_csv,
    summarize,
    summary_csv,
)
from .scenarios import UnknownScenario, generate_scenario
from .simulator import ALL_VARIANTS, HorizonExceeded, InvalidWorkload, SchedulerVariant, run
from .timeunits import to_ms
from .workload import ParseError, ValidationError, WorkloadFile, parse_workload, serialize

THREADS_ENV = "RED_SIM_THREADS"


class IoError(OSError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"3"`` or an inclusive range ``"0..9"``."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ValueError(f"bad seed range {text!r}; expected N or A..B") from None
    if hi < lo:
        raise ValueError(f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def worker_count(jobs: int) -> int:
    cap = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, min(cap, jobs))


def write_atomic(path: Union[str, Path], text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise IoError(f"cannot write to {path.parent}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _one(job: tuple[WorkloadFile, str, int]) -> tuple[str, int, str, str, RunSummary]:
    wf, variant, seed = job
    trace = run(wf.workload, wf.platform, SchedulerVariant.parse(variant), wf.scheduler, seed, wf.exec_model)
    summary = summarize(trace, wf.qoe_lambda)
    return variant, seed, trace.dumps(), outcomes_csv(outcomes(trace)), summary


def run_experiment(
    wf: WorkloadFile,
    variants: Sequence[Union[str, SchedulerVariant]],
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    workers: Optional[int] = None,
) -> list[RunSummary]:
    """Run every (variant, seed) pair and write one trace and one outcome
    CSV per pair, plus ``summary.csv`` and ``comparison.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc.strerror or exc}") from exc
    if not os.access(out, os.W_OK):
        raise IoError(f"{out} is not writable")
    names = [SchedulerVariant.parse(v).value if isinstance(v, str) else v.value for v in variants]
    jobs = [(wf, v, s) for v in names for s in seeds]
    n = workers or worker_count(len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    summaries = []
    for variant, seed, trace, outs, summary in results:
        write_atomic(out / f"trace_{variant}_seed{seed}.tsv", trace)
        write_atomic(out / f"outcomes_{variant}_seed{seed}.csv", outs)
        summaries.append(summary)
    table = summary_csv(summaries)
    write_atomic(out / "summary.csv", table)
    # compare what was written so a later `compare` reproduces this file
    write_atomic(out / "comparison.csv", comparison_csv(_report(read_summary_csv(table))))
    return summaries


def _report(summaries: Iterable[RunSummary]):
    by_variant: dict[str, list[RunSummary]] = {}
    for s in summaries:
        by_variant.setdefault(s.variant, []).append(s)
    return compare(by_variant)


def compare_dir(out_dir: Union[str, Path]) -> str:
    """Recompute ``comparison.csv`` from a directory's ``summary.csv``."""
    path = Path(out_dir) / "summary.csv"
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    table = comparison_csv(_report(read_summary_csv(text)))
    write_atomic(Path(out_dir) / "comparison.csv", table)
    return table


def profile_file(wf: WorkloadFile, node: str, dag: Optional[str] = None, seeds: Sequence[int] = (0,)) -> dict:
    specs = [t.spec for t in wf.workload.templates]
    delta = profile_contention(
        node,
        specs,
        wf.platform,
        list(seeds),
        dag_id=dag,
        interference=wf.workload.interference,
        exec_model=wf.exec_model,
    )
    return {"contention": [{"node": node, "platform": wf.platform.name, "delta_ms": to_ms(delta)}]}


# --- argument handling -----------------------------------------------------


def _variants(values: Optional[list[str]]) -> list[SchedulerVariant]:
    if not values or values == ["all"]:
        return list(ALL_VARIANTS)
    return [SchedulerVariant.parse(v) for v in values]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redsim", description="Deadline-aware DAG scheduling simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and check a workload file")
    v.add_argument("file")

    g = sub.add_parser("gen", help="write a built-in scenario as a workload file")
    g.add_argument("scenario", help="e.g. cruise, urban, burst(50), nonpartitionable(66.7)")
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--deadline", choices=("tight", "loose"))
    g.add_argument("-o", "--output", required=True)

    r = sub.add_parser("run", help="simulate a workload under one or more variants")
    r.add_argument("file")
    r.add_argument("--variant", action="append", help="EDF, RED-FG, RED-IDA, RED or all (repeatable)")
    r.add_argument("--seeds", default="0", help="N or inclusive A..B")
    r.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="rebuild comparison.csv from summary.csv")
    c.add_argument("dir")

    pr = sub.add_parser("profile", help="profile contention delay of one node")
    pr.add_argument("file")
    pr.add_argument("--node", required=True)
    pr.add_argument("--dag")
    pr.add_argument("--seeds", default="0")
    pr.add_argument("-o", "--output")
    return p


_EXPECTED = (
    ParseError,
    ValidationError,
    UnknownScenario,
    InvalidWorkload,
    HorizonExceeded,
    IncompleteTrace,
    MismatchedExperiment,
    DeadlineError,
    OSError,
    ValueError,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            wf = parse_workload(args.file)
            n = len(wf.workload.templates)
            print(f"ok: {n} DAG template{'s' if n != 1 else ''}, version {wf.version}")
        elif args.command == "gen":
            wf = generate_scenario(args.scenario, args.scale, args.seed, args.deadline)
            write_atomic(args.output, serialize(wf))
        elif args.command == "run":
            wf = parse_workload(args.file)
            summaries = run_experiment(wf, _variants(args.variant), parse_seeds(args.seeds), args.out)
            print(f"wrote {2 * len(summaries) + 2} files to {args.out}")
        elif args.command == "compare":
            sys.stdout.write(compare_dir(args.dir))
        elif args.command == "profile":
            wf = parse_workload(args.file)
            table = json.dumps(profile_file(wf, args.node, args.dag, parse_seeds(args.seeds)), indent=2) + "\n"
            if args.output:
                write_atomic(args.output, table)
            else:
                sys.stdout.write(table)
    except _EXPECTED as exc:
        print(f"redsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
