"""Deadline-aware DAG scheduling for multi-task inference, with a
deterministic simulator to compare scheduling variants."""

from .deadlines import ContentionTable, atomic_deadline, capacity_check, proportional_assign, reassign_residual
from .graph import DagSpec, Mutation, NodeAttrs, NodeKind, Role, critical_path_cost, heights, level_sets, make_dag
from .metrics import compare, outcomes, qoe_score, summarize
from .overload import BurstConfig, criticality_score, detect_overload, proactive_drop
from .refinement import dynamic_merge, refine, refine_all
from .scenarios import generate_scenario
from .simulator import (
    ALL_VARIANTS,
    DagTemplate,
    ExecModel,
    PlatformModel,
    SchedulerConfig,
    SchedulerVariant,
    SimTrace,
    Workload,
    run,
)
from .workload import WorkloadFile, parse_workload, serialize

__all__ = [
    "ALL_VARIANTS",
    "BurstConfig",
    "ContentionTable",
    "DagSpec",
    "DagTemplate",
    "ExecModel",
    "Mutation",
    "NodeAttrs",
    "NodeKind",
    "PlatformModel",
    "Role",
    "SchedulerConfig",
    "SchedulerVariant",
    "SimTrace",
    "Workload",
    "WorkloadFile",
    "atomic_deadline",
    "capacity_check",
    "compare",
    "critical_path_cost",
    "criticality_score",
    "detect_overload",
    "dynamic_merge",
    "generate_scenario",
    "heights",
    "level_sets",
    "make_dag",
    "outcomes",
    "parse_workload",
    "proactive_drop",
    "proportional_assign",
    "qoe_score",
    "reassign_residual",
    "refine",
    "refine_all",
    "run",
    "serialize",
    "summarize",
]
