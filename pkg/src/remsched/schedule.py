"""Executable schedules: decoding, validation, simulation, trace reports.

A schedule fixes one forward implementation per node, the set of tensors
the forward pass keeps (row 0), and per backward stage: the tensors
rematerialized during the stage's sweep (in node-index order, each with
its implementation; intermediates ride along with their creator), the
row handed to the next stage, the backward implementation, and which
rematerializations run in place.

The simulator executes a schedule step by step with exact byte
accounting and is deliberately independent of the integer program: it
never reads model rows, so agreement between simulated peaks/costs and
the model is evidence, not circularity. Execution semantics mirror the
model's row convention: entering stage t drops everything the carried
row holds that row t does not keep and the sweep does not rebuild, so a
backward dependency must sit in the stage's own row or be rematerialized
in-stage. Transients are freed as soon as their last in-stage reader has
run, which keeps every simulated peak at or below the modeled one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
import json

from .costmodel import Catalog
from .graph import DependencySets, Graph
from .memmodel import schedule_cost
from .units import FormatError, canonical_json_dumps, cost_str, format_cost, parse_cost, require

SCHEDULE_FORMAT = 1


class SimulationError(RuntimeError):
    """A schedule asked the simulator to read a tensor that is not live."""


@dataclass(frozen=True)
class StagePlan:
    node: int
    recompute: tuple[tuple[int, str | None], ...]
    store: tuple[int, ...]
    backward_impl: str
    inplace: tuple[int, ...] = ()


@dataclass(frozen=True)
class Schedule:
    forward_impls: tuple[str, ...]
    forward_store: tuple[int, ...]
    stages: tuple[StagePlan, ...]
    objective: Fraction | None = None


@dataclass(frozen=True)
class TraceStep:
    step: int
    op: str
    mem_before: int
    mem_peak: int
    mem_after: int
    cost: Fraction


@dataclass(frozen=True)
class Trace:
    steps: tuple[TraceStep, ...]
    peak_memory: int
    total_cost: Fraction


def schedule_to_doc(schedule: Schedule) -> dict:
    doc = {
        "format": SCHEDULE_FORMAT,
        "forward_impls": list(schedule.forward_impls),
        "forward_store": list(schedule.forward_store),
        "stages": [
            {
                "node": st.node,
                "recompute": [[u, impl] for u, impl in st.recompute],
                "store": list(st.store),
                "backward_impl": st.backward_impl,
                "inplace": list(st.inplace),
            }
            for st in schedule.stages
        ],
    }
    if schedule.objective is not None:
        doc["objective"] = format_cost(schedule.objective)
    return doc


def schedule_from_doc(document) -> Schedule:
    if isinstance(document, (str, Path)):
        with open(document, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    require(isinstance(document, dict), "schedule document must be a JSON object")
    require(document.get("format") == SCHEDULE_FORMAT,
            f"unsupported schedule format {document.get('format')!r}")
    impls = document.get("forward_impls")
    require(isinstance(impls, list) and all(isinstance(x, str) for x in impls),
            "'forward_impls' must be a list of names")
    store0 = document.get("forward_store", [])
    require(isinstance(store0, list), "'forward_store' must be a list")
    raw_stages = document.get("stages", [])
    require(isinstance(raw_stages, list), "'stages' must be a list")
    stages = []
    for raw in raw_stages:
        require(isinstance(raw, dict), "stage entries must be objects")
        rec = raw.get("recompute", [])
        require(isinstance(rec, list) and all(
            isinstance(e, list) and len(e) == 2 and (e[1] is None or isinstance(e[1], str))
            for e in rec), "stage 'recompute' must be [id, impl-or-null] pairs")
        stages.append(StagePlan(
            node=raw.get("node"),
            recompute=tuple((e[0], e[1]) for e in rec),
            store=tuple(raw.get("store", [])),
            backward_impl=raw.get("backward_impl", ""),
            inplace=tuple(raw.get("inplace", [])),
        ))
    objective = document.get("objective")
    return Schedule(
        forward_impls=tuple(impls),
        forward_store=tuple(store0),
        stages=tuple(stages),
        objective=None if objective is None else parse_cost(objective),
    )


def decode(result, g: Graph, catalog: Catalog) -> Schedule:
    """Turn a solver result (with its model) into a Schedule."""
    from .ilp import VarId

    if result.assignment is None:
        raise ValueError(f"cannot decode a result with status {result.status!r}")
    model = result.model
    a = result.assignment

    def on(vid: VarId) -> bool:
        return a[model.var_index[vid]] == 1

    forward_impls = []
    for i in range(1, g.n + 1):
        chosen = [l for l in range(len(catalog.fwd(i)))
                  if on(VarId("DeltaFwd", node=i, variant=l))]
        if len(chosen) != 1:
            raise ValueError(f"node {i}: forward choice is not one-hot in the assignment")
        forward_impls.append(catalog.fwd(i)[chosen[0]].name)

    def row_ids(row: int) -> tuple[int, ...]:
        return tuple(u.id for u in g.storables if on(VarId("S", row=row, node=u.id)))

    stages = []
    stage_nodes = g.stage_nodes
    for t in range(1, len(stage_nodes) + 1):
        k = stage_nodes[t - 1]
        rec: list[tuple[int, str | None]] = []
        for u in g.storables:
            if not on(VarId("R", row=t, node=u.id)):
                continue
            if u.is_intermediate:
                rec.append((u.id, None))
            else:
                chosen = [l for l in range(len(catalog.fwd(u.id)))
                          if on(VarId("DeltaRe", row=t, node=u.id, variant=l))]
                if len(chosen) != 1:
                    raise ValueError(f"stage {t}: recompute choice for node {u.id} "
                                     f"is not one-hot")
                rec.append((u.id, catalog.fwd(u.id)[chosen[0]].name))
        chosen = [l for l in range(len(catalog.bwd(k)))
                  if on(VarId("DeltaBwd", row=t, variant=l))]
        if len(chosen) != 1:
            raise ValueError(f"stage {t}: backward choice is not one-hot")
        inplace = tuple(
            i for i in range(1, k + 1)
            if VarId("Q", row=t, node=i) in model.var_index
            and on(VarId("Q", row=t, node=i)))
        stages.append(StagePlan(
            node=k,
            recompute=tuple(rec),
            store=row_ids(t),
            backward_impl=catalog.bwd(k)[chosen[0]].name,
            inplace=inplace,
        ))
    return Schedule(
        forward_impls=tuple(forward_impls),
        forward_store=row_ids(0),
        stages=tuple(stages),
        objective=result.objective,
    )


def validate(schedule: Schedule, g: Graph, sets: DependencySets,
             catalog: Catalog) -> list[str]:
    """Structural and executability checks; returns violation tags (empty = valid)."""
    out: list[str] = []
    storable = g.storable_by_id

    if len(schedule.forward_impls) != g.n:
        out.append("forward-impls-length")
        return out
    for i in range(1, g.n + 1):
        try:
            catalog.fwd_index(i, schedule.forward_impls[i - 1])
        except KeyError:
            out.append(f"unknown-forward-impl[n{i}]")
    for u in schedule.forward_store:
        if u not in storable:
            out.append(f"unknown-tensor[u{u}]")
            return out
    if len(set(schedule.forward_store)) != len(schedule.forward_store):
        out.append("duplicate-store[row0]")

    if tuple(st.node for st in schedule.stages) != g.stage_nodes:
        out.append("stage-order")
        return out

    prev_row = set(schedule.forward_store)
    for t, st in zip(range(1, len(schedule.stages) + 1), schedule.stages):
        k = st.node
        cur = set(st.store)
        rec_ids = [u for u, _ in st.recompute]
        rec_set = set(rec_ids)
        bad = False
        for u in list(cur | rec_set):
            if u not in storable:
                out.append(f"unknown-tensor[t{t},u{u}]")
                bad = True
        if bad:
            return out
        if len(rec_ids) != len(rec_set):
            out.append(f"duplicate-recompute[t{t}]")
        if len(set(st.store)) != len(st.store):
            out.append(f"duplicate-store[t{t}]")
        order_key = [(storable[u].pos, storable[u].is_intermediate, u) for u in rec_ids]
        if order_key != sorted(order_key):
            out.append(f"recompute-order[t{t}]")

        try:
            bwd_variant = catalog.bwd(k)[catalog.bwd_index(k, st.backward_impl)]
        except KeyError:
            out.append(f"unknown-backward-impl[t{t}]")
            prev_row = cur
            continue

        for u in sorted(rec_set):
            if storable[u].pos > k:
                out.append(f"recompute-beyond-stage[t{t},u{u}]")
        for u in sorted(cur):
            if u not in prev_row and u not in rec_set:
                out.append(f"store-carry[t{t},u{u}]")
        fwd_rec = {u: impl for u, impl in st.recompute if not storable[u].is_intermediate}
        for u, impl in sorted(fwd_rec.items()):
            if impl is None:
                out.append(f"recompute-impl-missing[t{t},n{u}]")
                continue
            try:
                catalog.fwd_index(u, impl)
            except KeyError:
                out.append(f"unknown-recompute-impl[t{t},n{u}]")
            for j in g.deps(u):
                if j not in cur and j not in rec_set:
                    out.append(f"recompute-deps[t{t},n{u},d{j}]")
        for u, impl in st.recompute:
            if not storable[u].is_intermediate:
                continue
            if impl is not None:
                out.append(f"intermediate-impl[t{t},u{u}]")
            if storable[u].creator not in fwd_rec:
                out.append(f"intermediate-with-creator[t{t},u{u}]")
            if u not in cur and u not in bwd_variant.deps:
                out.append(f"intermediate-usefulness[t{t},u{u}]")
        for d in bwd_variant.deps:
            if d not in cur and d not in rec_set:
                out.append(f"backward-needs[t{t},u{d}]")

        sweep = sorted(fwd_rec, key=lambda u: u)
        slot = {u: idx for idx, u in enumerate(sweep)}
        for i in sorted(set(st.inplace)):
            if i not in fwd_rec:
                out.append(f"inplace-not-recomputed[t{t},n{i}]")
                continue
            impl = fwd_rec[i]
            try:
                variant = catalog.fwd(i)[catalog.fwd_index(i, impl)]
            except KeyError:
                continue
            if not variant.inplace_capable:
                out.append(f"inplace-variant[t{t},n{i}]")
                continue
            if not g.deps(i):
                out.append(f"inplace-no-input[t{t},n{i}]")
                continue
            j = g.deps(i)[0]
            if g.output_bytes(i) != g.output_bytes(j):
                out.append(f"inplace-size-mismatch[t{t},n{i},d{j}]")
            if i in prev_row:
                out.append(f"inplace-output-already-stored[t{t},n{i}]")
            if j in cur:
                out.append(f"inplace-input-kept[t{t},n{i},d{j}]")
            if j in bwd_variant.deps:
                out.append(f"inplace-input-read-later[t{t},n{i},d{j}]")
            for u in sweep[slot[i] + 1:]:
                if j in g.deps(u):
                    out.append(f"inplace-input-read-later[t{t},n{i},d{j}]")
                    break
        prev_row = cur

    if schedule.stages and schedule.stages[-1].store:
        out.append("final-row-not-empty")

    if schedule.objective is not None and not out:
        if schedule_cost(g, catalog, schedule) != schedule.objective:
            out.append("objective-mismatch")
    return out


def simulate(schedule: Schedule, g: Graph, catalog: Catalog) -> Trace:
    """Execute a schedule with exact byte accounting.

    Raises SimulationError when an operator would read a tensor that is
    not live; run validate() first for a structured report.
    """
    storable = g.storable_by_id
    bwd_set = set(g.bwd_nodes)
    sizes = {u.id: u.nbytes for u in g.storables}

    steps: list[TraceStep] = []
    total_cost = Fraction(0)
    acts: dict[int, int] = {}
    grads: dict[int, int] = {}
    mem = g.params_bytes
    peak_overall = mem

    def record(op: str, peak: int, before: int, cost: Fraction) -> None:
        nonlocal peak_overall, total_cost
        peak_overall = max(peak_overall, peak)
        total_cost += cost
        steps.append(TraceStep(len(steps) + 1, op, before, peak, mem, cost))

    store0 = set(schedule.forward_store)
    ints_of = g.intermediates_of
    for i in range(1, g.n + 1):
        name = schedule.forward_impls[i - 1]
        variant = catalog.fwd(i)[catalog.fwd_index(i, name)]
        for j in g.deps(i):
            if j not in acts:
                raise SimulationError(f"forward {i}: input {j} is not live")
        new_ints = [u for u in ints_of[i] if u.id in store0]
        alloc = g.output_bytes(i) + sum(u.nbytes for u in new_ints)
        before = mem
        peak = mem + alloc + variant.workspace_bytes
        mem += alloc
        acts[i] = g.output_bytes(i)
        for u in new_ints:
            acts[u.id] = u.nbytes
        for j in range(1, i + 1):
            if j in acts and j not in store0 and g.last_fwd_use[j] <= i:
                mem -= acts.pop(j)
        record(f"forward {i} [{name}]", peak, before, variant.cost)

    if set(acts) != store0:
        raise SimulationError("forward pass ended with a live set different "
                              "from the forward store row")

    prev_row = store0
    for t, st in zip(range(1, len(schedule.stages) + 1), schedule.stages):
        k = st.node
        cur = set(st.store)
        bwd_variant = catalog.bwd(k)[catalog.bwd_index(k, st.backward_impl)]

        for u in sorted(prev_row - cur):
            if u in acts:
                mem -= acts.pop(u)

        fwd_entries = [(u, impl) for u, impl in st.recompute
                       if not storable[u].is_intermediate]
        plan_ints: dict[int, list[int]] = {}
        for u, impl in st.recompute:
            if storable[u].is_intermediate:
                plan_ints.setdefault(storable[u].creator, []).append(u)

        # last in-stage reader of every tensor; creations count as a use so
        # an unread rematerialization is dropped right after it runs
        last_use: dict[int, int] = {}
        for e, (i, _impl) in zip(range(len(fwd_entries)), fwd_entries):
            for j in g.deps(i):
                last_use[j] = e
            last_use[i] = e
            for u in plan_ints.get(i, ()):
                last_use[u] = e
        bwd_slot = len(fwd_entries)
        for d in bwd_variant.deps:
            last_use[d] = bwd_slot

        def free_after(slot: int) -> None:
            nonlocal mem
            for u, lu in last_use.items():
                if lu == slot and u not in cur and u in acts:
                    mem -= acts.pop(u)

        for e, (i, impl) in zip(range(len(fwd_entries)), fwd_entries):
            if impl is None:
                raise SimulationError(f"stage {t}: node {i} has no recompute impl")
            variant = catalog.fwd(i)[catalog.fwd_index(i, impl)]
            for j in g.deps(i):
                if j not in acts:
                    raise SimulationError(f"stage {t}: recompute {i} input {j} is not live")
            int_bytes = sum(sizes[u] for u in plan_ints.get(i, ()))
            before = mem
            if i in st.inplace:
                j = g.deps(i)[0]
                if acts.get(j) != g.output_bytes(i):
                    raise SimulationError(f"stage {t}: in-place recompute {i} needs a "
                                          f"live same-size input")
                peak = mem + int_bytes + variant.workspace_bytes
                mem -= acts.pop(j)
                label = f"recompute {i} [{impl}] inplace"
            else:
                peak = mem + g.output_bytes(i) + int_bytes + variant.workspace_bytes
                label = f"recompute {i} [{impl}]"
            acts[i] = g.output_bytes(i)
            mem += g.output_bytes(i)
            for u in plan_ints.get(i, ()):
                acts[u] = sizes[u]
                mem += sizes[u]
            free_after(e)
            record(label, peak, before, variant.cost)

        for d in bwd_variant.deps:
            if d not in acts:
                raise SimulationError(f"stage {t}: backward of {k} needs {d} live")
        if k not in grads:
            if t != 1:
                raise SimulationError(f"stage {t}: gradient of {k} was never produced")
            grads[k] = g.grad_bytes(k)
            mem += grads[k]
            new_grad_bytes = grads[k]
            before = mem - new_grad_bytes
        else:
            new_grad_bytes = 0
            before = mem
        for j in g.deps(k):
            if j in bwd_set and j not in grads:
                grads[j] = g.grad_bytes(j)
                mem += grads[j]
                new_grad_bytes += grads[j]
        peak = mem + bwd_variant.workspace_bytes
        mem -= grads.pop(k)
        free_after(bwd_slot)
        record(f"backward {k} [{st.backward_impl}]", peak, before, bwd_variant.cost)

        if set(acts) != cur:
            raise SimulationError(f"stage {t}: live set does not match the stored row")
        prev_row = cur

    if schedule.stages:
        if acts or grads:
            raise SimulationError("simulation ended with live tensors")
        if mem != g.params_bytes:
            raise SimulationError("simulation ended with unaccounted memory")

    return Trace(tuple(steps), peak_overall, total_cost)


def trace_report(trace: Trace, format: str = "csv") -> str:
    """Render a trace as CSV (with a totals row) or canonical JSON."""
    if format == "csv":
        lines = ["step,op,mem_before,mem_peak,mem_after,cost"]
        for s in trace.steps:
            lines.append(f"{s.step},{s.op},{s.mem_before},{s.mem_peak},"
                         f"{s.mem_after},{cost_str(s.cost)}")
        lines.append(f"total,,,{trace.peak_memory},,{cost_str(trace.total_cost)}")
        return "\n".join(lines) + "\n"
    if format == "json":
        return canonical_json_dumps({
            "steps": [
                {
                    "step": s.step,
                    "op": s.op,
                    "mem_before": s.mem_before,
                    "mem_peak": s.mem_peak,
                    "mem_after": s.mem_after,
                    "cost": format_cost(s.cost),
                }
                for s in trace.steps
            ],
            "peak_memory": trace.peak_memory,
            "total_cost": format_cost(trace.total_cost),
        })
    raise ValueError(f"unknown trace format {format!r}, expected 'csv' or 'json'")


def store_everything_schedule(g: Graph, catalog: Catalog) -> Schedule:
    """The zero-recompute baseline: keep every tensor, default implementations.

    Row t keeps exactly what stages t.. still read, so the last row is
    empty only when the final stage's default backward has no stored
    dependencies; graphs violating that cannot run recompute-free.
    """
    forward_impls = tuple(catalog.fwd(i)[0].name for i in range(1, g.n + 1))
    needs: list[set[int]] = []
    for k in g.stage_nodes:
        needs.append(set(catalog.bwd(k)[0].deps))
    stages = []
    n_stages = len(g.stage_nodes)
    for t in range(1, n_stages + 1):
        row: set[int] = set()
        for t2 in range(t - 1, n_stages):
            row |= needs[t2]
        if t == n_stages and row:
            raise ValueError(
                "store-everything baseline needs a dependency-free final stage, "
                f"but stage {t} still reads {sorted(row)}")
        store = tuple(u.id for u in g.storables if u.id in row) if t < n_stages else ()
        stages.append(StagePlan(
            node=g.stage_nodes[t - 1],
            recompute=(),
            store=store,
            backward_impl=catalog.bwd(g.stage_nodes[t - 1])[0].name,
            inplace=(),
        ))
    schedule = Schedule(
        forward_impls=forward_impls,
        forward_store=tuple(u.id for u in g.storables),
        stages=tuple(stages),
        objective=None,
    )
    return replace(schedule, objective=schedule_cost(g, catalog, schedule))


def _pick_cheap(variants) -> int:
    return min(range(len(variants)), key=lambda l: (variants[l].cost, l))


def _pick_lean(variants, dep_bytes) -> int:
    return min(range(len(variants)),
               key=lambda l: (variants[l].workspace_bytes + dep_bytes(variants[l]),
                              variants[l].cost, l))


def _segment_schedule(g: Graph, catalog: Catalog, spacing: int,
                      fwd_mode: str, bwd_mode: str,
                      window: bool = True) -> Schedule:
    """Evenly spaced long-term checkpoints, rebuild-and-carry in between.

    The forward pass keeps every ``spacing``-th activation. Each stage
    rebuilds the gap between the checkpoint below it and its own reads,
    stores the rebuilt values that later stages still read, and drops a
    checkpoint once the sweep passes it. The mode arguments pick
    implementations: "cheap" by cost, "lean" by memory footprint first.
    With ``window`` off the rows carry nothing but the surviving
    checkpoints and the stage's own reads, trading extra rebuilds for
    the smallest rows this family can make.
    """
    storable = {u.id: u for u in g.storables}
    size = {u.id: u.nbytes for u in g.storables}

    def pick(variants, mode):
        if mode == "cheap":
            return _pick_cheap(variants)
        return _pick_lean(variants,
                          lambda v: sum(size[d] for d in getattr(v, "deps", ())))

    fwd_pick = [pick(catalog.fwd(i), fwd_mode) for i in range(1, g.n + 1)]
    stage_nodes = g.stage_nodes
    n_stages = len(stage_nodes)
    bwd_pick = [pick(catalog.bwd(k), bwd_mode) for k in stage_nodes]
    needs = [set(catalog.bwd(stage_nodes[t])[bwd_pick[t]].deps)
             for t in range(n_stages)]
    future = [set() for _ in range(n_stages + 1)]
    for t in range(n_stages - 1, -1, -1):
        future[t] = future[t + 1] | needs[t]

    boundaries = {i for i in range(1, g.n) if i % spacing == 0}
    prev: set[int] = set(boundaries)
    plans: list[StagePlan] = []
    for t in range(1, n_stages + 1):
        k = stage_nodes[t - 1]
        seg_lo = max((b for b in boundaries if b < k), default=0)
        d_now = needs[t - 1]
        if t == n_stages:
            keep: set[int] = set()
        else:
            keep = (d_now & prev) | {b for b in boundaries & prev if b < k}
            if window:
                keep |= {x for x in prev
                         if seg_lo < storable[x].pos <= k and x in future[t]}
        rec: set[int] = set()
        work: list[tuple[int, bool]] = [(x, False) for x in sorted(d_now)]
        while work:
            x, forced = work.pop()
            if x in rec or (not forced and x in keep):
                continue
            rec.add(x)
            u = storable[x]
            if u.is_intermediate:
                work.append((u.creator, True))
            else:
                work.extend((d, False) for d in g.deps(x)
                            if d not in keep and d not in rec)
        if t == n_stages:
            cur = set()
        elif window:
            cur = keep | (rec & future[t])
        else:
            cur = keep
        rec_order = sorted(rec, key=lambda x: (storable[x].pos,
                                               storable[x].is_intermediate, x))
        rec_entries = tuple(
            (x, None if storable[x].is_intermediate
             else catalog.fwd(x)[fwd_pick[x - 1]].name)
            for x in rec_order)
        plans.append(StagePlan(
            node=k,
            recompute=rec_entries,
            store=tuple(u.id for u in g.storables if u.id in cur),
            backward_impl=catalog.bwd(k)[bwd_pick[t - 1]].name,
            inplace=(),
        ))
        prev = cur
    schedule = Schedule(
        forward_impls=tuple(catalog.fwd(i)[fwd_pick[i - 1]].name
                            for i in range(1, g.n + 1)),
        forward_store=tuple(u.id for u in g.storables if u.id in boundaries),
        stages=tuple(plans),
        objective=None,
    )
    return replace(schedule, objective=schedule_cost(g, catalog, schedule))


def checkpoint_heuristic(g: Graph, sets: DependencySets, catalog: Catalog,
                         budget: int) -> Schedule | None:
    """Best budget-feasible schedule from a family of simple constructions.

    Tries the store-everything baseline plus evenly spaced checkpoint
    schedules at every spacing, with cost-greedy and memory-lean
    implementation picks. Candidates are screened with the exact memory
    model; the cheapest one under the budget wins (first found on
    ties). Returns None when no candidate fits.
    """
    from .oracle import check_schedule

    candidates: list[Schedule] = []
    try:
        candidates.append(store_everything_schedule(g, catalog))
    except ValueError:
        pass
    for fwd_mode in ("cheap", "lean"):
        for bwd_mode in ("cheap", "lean"):
            for window in (True, False):
                seen: set[frozenset[int]] = set()
                for spacing in range(1, g.n + 1):
                    marks = frozenset(i for i in range(1, g.n) if i % spacing == 0)
                    if marks in seen:
                        continue
                    seen.add(marks)
                    candidates.append(_segment_schedule(
                        g, catalog, spacing, fwd_mode, bwd_mode, window))
    best: Schedule | None = None
    for cand in candidates:
        ok, _, _ = check_schedule(g, sets, catalog, cand, budget)
        if ok and (best is None or cand.objective < best.objective):
            best = cand
    return best
