"""Routing-loop detection from TTL-exceeded seeds."""

from .classify import (
    DEFAULT_DEGREE_THRESHOLD,
    LoopCore,
    LoopFinding,
    as_reduce,
    classify_loop,
    slash24,
)
from .cycles import elementary_cycles, simple_cycles_indexed
from .graph import Label, LabelGraph, LabelPath, build_label_graph
from .seeds import SeedTarget, schedule_seeds
from .traceroute import (
    PersistenceTable,
    ProbeConfig,
    TracerouteOutcome,
    find_loop,
    persistence_check,
    run_traceroutes,
    traceroute,
)

__all__ = [
    "DEFAULT_DEGREE_THRESHOLD",
    "Label",
    "LabelGraph",
    "LabelPath",
    "LoopCore",
    "LoopFinding",
    "PersistenceTable",
    "ProbeConfig",
    "SeedTarget",
    "TracerouteOutcome",
    "as_reduce",
    "build_label_graph",
    "classify_loop",
    "elementary_cycles",
    "find_loop",
    "persistence_check",
    "run_traceroutes",
    "schedule_seeds",
    "simple_cycles_indexed",
    "slash24",
    "traceroute",
]
