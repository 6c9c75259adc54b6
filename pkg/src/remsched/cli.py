"""Command line interface.

Subcommands:
  solve       pick a schedule and implementations under a byte budget
  simulate    execute a schedule file and emit a step-by-step trace
  sweep       grid of budgets x catalog ablations, one CSV row per cell
  oracle      exhaustive cross-check of the solver on a small instance
  export-lp   write the integer program in LP format
  gen         generate a synthetic graph and catalog

Every command that writes an artifact also writes a run manifest next
to it: tool name and version, the subcommand, its options, and the
sha256 of each input file. Manifests carry no timestamps, so reruns
with identical inputs produce identical files (solver telemetry, which
records wall-clock times, lives in a separate .jsonl file).

Exit codes: 0 success/optimal, 1 unreadable or malformed input,
2 feasible but not proven optimal, 3 infeasible, 4 stopped with no
incumbent, 5 invalid schedule, 6 simulated peak over budget, 7 oracle
cross-check mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .costmodel import ABLATION_MODES, GENERATOR_KINDS, apply_ablation, catalog_to_doc, \
    generate_synthetic, load_catalog
from .graph import compute_dependency_sets, graph_to_doc, load_graph
from .ilp import assignment_from_schedule, build_model, export_lp
from .oracle import cross_check
from .schedule import checkpoint_heuristic, decode, schedule_from_doc, schedule_to_doc, \
    simulate, store_everything_schedule, trace_report, validate
from .solver import solve
from .units import FormatError, canonical_json_dumps, cost_str, parse_bytes, \
    parse_cost, sha256_file

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_FEASIBLE_GAP = 2
EXIT_INFEASIBLE = 3
EXIT_NO_INCUMBENT = 4
EXIT_INVALID_SCHEDULE = 5
EXIT_OVER_BUDGET = 6
EXIT_MISMATCH = 7

_STATUS_EXIT = {
    "optimal": EXIT_OK,
    "feasible-gap": EXIT_FEASIBLE_GAP,
    "infeasible": EXIT_INFEASIBLE,
    "timeout-no-incumbent": EXIT_NO_INCUMBENT,
}

MANIFEST_FORMAT = 1


class _InputError(Exception):
    pass


def _read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _InputError(f"{path} is not valid JSON: {exc}") from exc


def _load_instance(args):
    try:
        g = load_graph(_read_json(args.graph))
        catalog = load_catalog(_read_json(args.catalog), g)
    except FormatError as exc:
        raise _InputError(str(exc)) from exc
    return g, catalog


def _parse_budget(text: str) -> int:
    try:
        return parse_bytes(text)
    except FormatError as exc:
        raise _InputError(str(exc)) from exc


def _parse_budget_list(text: str) -> list[int]:
    return [_parse_budget(part.strip()) for part in text.split(",") if part.strip()]


def _write_text(path: str, content: str) -> None:
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(content, encoding="utf-8")


def _write_manifest(out_path: str, command: str, options: dict,
                    inputs: list[str], wall_clock_budget_s: float | None,
                    manifest_path: str | None = None) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "tool": {"name": "remsched", "version": __version__},
        "command": command,
        "options": {k: options[k] for k in sorted(options)},
        "inputs": [{"path": p, "sha256": sha256_file(p)} for p in inputs],
        "wall_clock_budget_s": wall_clock_budget_s,
    }
    path = manifest_path or out_path + ".manifest.json"
    _write_text(path, canonical_json_dumps(doc))


def _solver_options(args) -> dict:
    opts: dict = {"branch_order": args.branch_order}
    if args.time_limit is not None:
        opts["time_limit_s"] = args.time_limit
    if args.node_limit is not None:
        opts["node_limit"] = args.node_limit
    if args.gap is not None:
        opts["gap_target"] = parse_cost(args.gap)
    return opts


def _cmd_solve(args) -> int:
    g, catalog = _load_instance(args)
    catalog = apply_ablation(catalog, g, args.ablation)
    sets = compute_dependency_sets(g, args.bound)
    budget = _parse_budget(args.budget)
    model = build_model(g, sets, catalog, budget,
                        {"inplace": not args.no_inplace, "bound_kind": args.bound})
    opts = _solver_options(args)
    if not args.no_warm_start:
        seed = checkpoint_heuristic(g, sets, catalog, budget)
        if seed is not None:
            opts["incumbent"] = assignment_from_schedule(model, seed)
    res = solve(model, opts)

    if args.lp:
        with open(args.lp, "w", encoding="utf-8") as fh:
            export_lp(model, fh)
    telemetry_path = args.telemetry or args.out + ".telemetry.jsonl"
    _write_text(telemetry_path,
                "".join(json.dumps(e, sort_keys=True) + "\n" for e in res.telemetry))

    print(f"status: {res.status}")
    print(f"objective: {'none' if res.objective is None else cost_str(res.objective)}")
    print(f"lower_bound: {'none' if res.lower_bound is None else cost_str(res.lower_bound)}")
    print(f"nodes: {res.nodes}")

    if res.assignment is not None:
        schedule = decode(res, g, catalog)
        _write_text(args.out, canonical_json_dumps(schedule_to_doc(schedule)))
    _write_manifest(args.out, "solve", {
        "budget": budget,
        "ablation": args.ablation,
        "bound": args.bound,
        "inplace": not args.no_inplace,
        "branch_order": args.branch_order,
        "gap": args.gap,
        "node_limit": args.node_limit,
        "warm_start": not args.no_warm_start,
    }, [args.graph, args.catalog], args.time_limit, args.manifest)
    return _STATUS_EXIT[res.status]


def _cmd_simulate(args) -> int:
    g, catalog = _load_instance(args)
    try:
        schedule = schedule_from_doc(_read_json(args.schedule))
    except FormatError as exc:
        raise _InputError(str(exc)) from exc
    sets = compute_dependency_sets(g, args.bound)
    problems = validate(schedule, g, sets, catalog)
    if problems:
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_INVALID_SCHEDULE
    trace = simulate(schedule, g, catalog)
    _write_text(args.out, trace_report(trace, args.format))
    _write_manifest(args.out, "simulate", {
        "format": args.format,
        "bound": args.bound,
        "budget": None if args.budget is None else _parse_budget(args.budget),
    }, [args.graph, args.catalog, args.schedule], None, args.manifest)
    print(f"peak_memory: {trace.peak_memory}")
    print(f"total_cost: {cost_str(trace.total_cost)}")
    if args.budget is not None and trace.peak_memory > _parse_budget(args.budget):
        print(f"over budget: peak {trace.peak_memory} > {_parse_budget(args.budget)}",
              file=sys.stderr)
        return EXIT_OVER_BUDGET
    return EXIT_OK


def _sweep_cell(g, sets, cat, mode, budget, base_cost, inplace, solver_opts,
                carry, warm):
    model = build_model(g, sets, cat, budget,
                        {"inplace": inplace, "bound_kind": sets.bound_kind})
    opts = dict(solver_opts)
    seeds = [] if carry is None else [carry]
    if warm:
        h = checkpoint_heuristic(g, sets, cat, budget)
        if h is not None:
            seeds.append(h)
    if seeds:
        opts["incumbent"] = assignment_from_schedule(
            model, min(seeds, key=lambda s: s.objective))
    res = solve(model, opts)
    objective = ""
    peak = ""
    overhead = ""
    schedule = None
    if res.objective is not None:
        objective = cost_str(res.objective)
        overhead = cost_str((res.objective - base_cost) / base_cost * 100)
    if res.assignment is not None:
        schedule = decode(res, g, cat)
        peak = str(simulate(schedule, g, cat).peak_memory)
    row = f"{budget},{mode},{res.status},{objective},{peak},{overhead}"
    return row, schedule


def _cmd_sweep(args) -> int:
    g, catalog = _load_instance(args)
    budgets = _parse_budget_list(args.budgets)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in ABLATION_MODES:
            raise _InputError(f"unknown ablation mode {m!r}, expected one of "
                              f"{', '.join(ABLATION_MODES)}")
    sets = compute_dependency_sets(g, args.bound)
    base_cost = store_everything_schedule(g, apply_ablation(catalog, g, "none")).objective
    solver_opts = _solver_options(args)
    warm = not args.no_warm_start

    def run_mode(mode):
        # budgets run tightest first so each solution seeds the next, looser
        # cell; a schedule that fits a small budget always fits a larger one
        cat = apply_ablation(catalog, g, mode)
        carry = None
        rows = {}
        for budget in sorted(set(budgets)):
            row, schedule = _sweep_cell(g, sets, cat, mode, budget, base_cost,
                                        not args.no_inplace, solver_opts, carry, warm)
            rows[budget] = row
            if schedule is not None and (carry is None
                                         or schedule.objective <= carry.objective):
                carry = schedule
        return mode, rows

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            by_mode = dict(pool.map(run_mode, modes))
    else:
        by_mode = dict(run_mode(mode) for mode in modes)

    rows = [by_mode[mode][budget] for budget in budgets for mode in modes]
    header = "budget,mode,status,objective,simulated_peak,overhead_vs_store_everything_pct"
    _write_text(args.out, "\n".join([header] + rows) + "\n")
    _write_manifest(args.out, "sweep", {
        "budgets": budgets,
        "modes": modes,
        "bound": args.bound,
        "inplace": not args.no_inplace,
        "threads": args.threads,
        "branch_order": args.branch_order,
        "gap": args.gap,
        "node_limit": args.node_limit,
        "warm_start": warm,
    }, [args.graph, args.catalog], args.time_limit, args.manifest)
    print(f"cells: {len(rows)}")
    print(f"baseline_cost: {cost_str(base_cost)}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    g, catalog = _load_instance(args)
    catalog = apply_ablation(catalog, g, args.ablation)
    budgets = _parse_budget_list(args.budgets)
    options = {"bound_kind": args.bound, "inplace": not args.no_inplace}
    if args.node_cap is not None:
        options["oracle"] = {"node_cap": args.node_cap}
    try:
        report = cross_check(g, catalog, budgets, options)
    except ValueError as exc:
        raise _InputError(str(exc)) from exc
    _write_text(args.out, canonical_json_dumps(report))
    _write_manifest(args.out, "oracle", {
        "budgets": budgets,
        "ablation": args.ablation,
        "bound": args.bound,
        "inplace": not args.no_inplace,
        "node_cap": args.node_cap,
    }, [args.graph, args.catalog], None, args.manifest)
    print(f"pass: {'true' if report['pass'] else 'false'}")
    for cell in report["cells"]:
        line = (f"budget {cell['budget']}: solver {cell['solver_status']}"
                f" {cell['solver_objective'] or '-'}, oracle"
                f" {'feasible ' + cell['oracle_objective'] if cell['oracle_feasible'] else 'infeasible'}")
        print(line)
    return EXIT_OK if report["pass"] else EXIT_MISMATCH


def _cmd_export_lp(args) -> int:
    g, catalog = _load_instance(args)
    catalog = apply_ablation(catalog, g, args.ablation)
    sets = compute_dependency_sets(g, args.bound)
    budget = _parse_budget(args.budget)
    model = build_model(g, sets, catalog, budget,
                        {"inplace": not args.no_inplace, "bound_kind": args.bound})
    with open(args.out, "w", encoding="utf-8") as fh:
        export_lp(model, fh)
    _write_manifest(args.out, "export-lp", {
        "budget": budget,
        "ablation": args.ablation,
        "bound": args.bound,
        "inplace": not args.no_inplace,
    }, [args.graph, args.catalog], None, args.manifest)
    stats = model.stats()
    print(f"variables: {stats['vars']['total']}")
    print(f"rows: {stats['rows']['total']}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    try:
        g, catalog = generate_synthetic(
            args.kind, args.n, args.seed,
            fwd_variants=args.fwd_variants,
            bwd_variants=args.bwd_variants,
            intermediate_every=args.intermediate_every,
            inplace_marks=args.inplace_marks,
        )
    except (ValueError, FormatError) as exc:
        raise _InputError(str(exc)) from exc
    _write_text(args.out_graph, canonical_json_dumps(graph_to_doc(g)))
    _write_text(args.out_catalog, canonical_json_dumps(catalog_to_doc(catalog)))
    _write_manifest(args.out_graph, "gen", {
        "kind": args.kind,
        "n": args.n,
        "seed": args.seed,
        "fwd_variants": args.fwd_variants,
        "bwd_variants": args.bwd_variants,
        "intermediate_every": args.intermediate_every,
        "inplace_marks": args.inplace_marks,
    }, [], None, args.manifest)
    print(f"graph: {args.out_graph}")
    print(f"catalog: {args.out_catalog}")
    return EXIT_OK


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="graph JSON file")
    p.add_argument("--catalog", required=True, help="implementation catalog JSON file")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bound", choices=("upper", "tight"), default="upper",
                   help="dependency bound used inside recompute peaks")
    p.add_argument("--no-inplace", action="store_true",
                   help="disable in-place rewrite variables")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--branch-order", choices=("paper", "fixed", "most-tight"),
                   default="paper", help="branching variable order")
    p.add_argument("--time-limit", type=float, default=None, metavar="SECONDS")
    p.add_argument("--node-limit", type=int, default=None, metavar="N")
    p.add_argument("--gap", default=None, metavar="FRACTION",
                   help="stop once the relative gap reaches this value, e.g. 0.1")
    p.add_argument("--no-warm-start", action="store_true",
                   help="do not seed the search with a heuristic schedule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remsched",
        description="joint rematerialization and implementation scheduling "
                    "under a memory budget")
    parser.add_argument("--version", action="version", version=f"remsched {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="optimize a schedule for one budget")
    _add_instance_args(p)
    p.add_argument("--budget", required=True, help="byte budget, e.g. 96MiB or 1024")
    p.add_argument("--out", required=True, help="schedule JSON to write")
    p.add_argument("--ablation", choices=ABLATION_MODES, default="all")
    _add_model_args(p)
    _add_solver_args(p)
    p.add_argument("--lp", default=None, help="also export the program in LP format")
    p.add_argument("--telemetry", default=None, help="telemetry JSONL path")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("simulate", help="execute a schedule and write a trace")
    _add_instance_args(p)
    p.add_argument("--schedule", required=True, help="schedule JSON file")
    p.add_argument("--out", required=True, help="trace file to write")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--budget", default=None,
                   help="fail with exit 6 if the simulated peak exceeds this")
    p.add_argument("--bound", choices=("upper", "tight"), default="upper")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="budgets x ablation modes, CSV output")
    _add_instance_args(p)
    p.add_argument("--budgets", required=True, help="comma separated byte budgets")
    p.add_argument("--modes", default="none,conv,out,all",
                   help="comma separated ablation modes")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--threads", type=int, default=1,
                   help="run this many sweep cells concurrently")
    _add_model_args(p)
    _add_solver_args(p)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("oracle", help="cross-check the solver by enumeration")
    _add_instance_args(p)
    p.add_argument("--budgets", required=True, help="comma separated byte budgets")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--ablation", choices=ABLATION_MODES, default="all")
    p.add_argument("--node-cap", type=int, default=None,
                   help="refuse graphs with more forward nodes than this")
    _add_model_args(p)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("export-lp", help="write the integer program in LP format")
    _add_instance_args(p)
    p.add_argument("--budget", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=ABLATION_MODES, default="all")
    _add_model_args(p)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_export_lp)

    p = sub.add_parser("gen", help="generate a synthetic graph and catalog")
    p.add_argument("--kind", choices=GENERATOR_KINDS, required=True)
    p.add_argument("--n", type=int, required=True, help="forward node count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fwd-variants", type=int, default=1)
    p.add_argument("--bwd-variants", type=int, default=1)
    p.add_argument("--intermediate-every", type=int, default=0,
                   help="attach a saved intermediate to every k-th node")
    p.add_argument("--inplace-marks", action="store_true",
                   help="mark eligible reference variants as in-place capable")
    p.add_argument("--out-graph", required=True)
    p.add_argument("--out-catalog", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=_cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
