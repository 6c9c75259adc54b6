"""Joint rematerialization and implementation scheduling under a memory budget."""

__version__ = "0.1.0"

from .costmodel import (
    ABLATION_MODES,
    Catalog,
    apply_ablation,
    bundled_fixture,
    catalog_to_doc,
    generate_synthetic,
    load_catalog,
    resnet_toy,
)
from .graph import (
    DependencySets,
    Graph,
    compute_dependency_sets,
    graph_to_doc,
    load_graph,
)
from .ilp import (
    Model,
    assignment_from_schedule,
    build_model,
    evaluate_assignment,
    export_lp,
    export_lp_string,
)
from .memmodel import MemModel, schedule_cost
from .oracle import OracleResult, check_schedule, cross_check, enumerate_schedules
from .schedule import (
    Schedule,
    StagePlan,
    Trace,
    checkpoint_heuristic,
    decode,
    schedule_from_doc,
    schedule_to_doc,
    simulate,
    store_everything_schedule,
    trace_report,
    validate,
)
from .solver import SolveResult, lower_bound, propagate, solve
from .units import FormatError, format_cost, parse_bytes, parse_cost

__all__ = [
    "ABLATION_MODES",
    "Catalog",
    "DependencySets",
    "FormatError",
    "Graph",
    "MemModel",
    "Model",
    "OracleResult",
    "Schedule",
    "SolveResult",
    "StagePlan",
    "Trace",
    "__version__",
    "apply_ablation",
    "assignment_from_schedule",
    "build_model",
    "bundled_fixture",
    "catalog_to_doc",
    "check_schedule",
    "checkpoint_heuristic",
    "compute_dependency_sets",
    "cross_check",
    "decode",
    "enumerate_schedules",
    "evaluate_assignment",
    "export_lp",
    "export_lp_string",
    "format_cost",
    "generate_synthetic",
    "graph_to_doc",
    "load_catalog",
    "load_graph",
    "lower_bound",
    "parse_bytes",
    "parse_cost",
    "propagate",
    "resnet_toy",
    "schedule_cost",
    "schedule_from_doc",
    "schedule_to_doc",
    "simulate",
    "solve",
    "store_everything_schedule",
    "trace_report",
    "validate",
]
