"""Exhaustive reference optimizer for small instances.

The oracle enumerates a reduced but optimum-preserving schedule space:
the forward store row, and per stage the carried-in row, the produced
row, and the backward implementation. Everything else is forced by
those choices, so enumeration over them is exhaustive in effect:

* The rematerialization set of a stage is determined: a tensor must be
  rebuilt when the produced row keeps it but the carried row did not
  have it, or the backward reads it and the produced row does not keep
  it, plus the dependency closure of those (a rebuilt node needs every
  input either kept in the produced row or itself rebuilt, and an
  intermediate needs its creator to run). Any extra rematerialization
  only adds cost and bytes, so dropping it never loses an optimum.
* Each forced rematerialization independently takes its cheapest
  byte-feasible implementation, because implementation choices couple
  only through their own peak-state rows.
* In-place rewrites are never taken: they change no cost term and
  every memory state is accounted the same with or without them, so a
  schedule without them is feasible whenever one with them is.

Ties are broken deterministically: cheapest implementation first by
(cost, catalog order), and equal-cost table entries prefer the
lexicographically smaller (carried row, backward choice).

The dynamic program walks stages backward-to-front over store rows as
bitmasks; `enumerated_count` reports the number of candidate states
examined: one per forward store row plus one per (carried row,
produced row, backward implementation) triple reachable under the
byte budget, so the count depends on the budget as well as the
instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .costmodel import Catalog, catalog_to_doc
from .graph import Graph, compute_dependency_sets, graph_to_doc
from .memmodel import MemModel
from .schedule import Schedule, StagePlan, schedule_to_doc, simulate, validate
from .units import format_cost

ORACLE_DEFAULTS = {"bound_kind": "upper", "node_cap": 6, "storable_cap": 12}


@dataclass(frozen=True)
class OracleResult:
    feasible: bool
    optimum: Fraction | None
    schedule: Schedule | None
    enumerated_count: int
    model_peak: int | None
    true_peak: int | None


def _submasks(mask: int):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def enumerate_schedules(g: Graph, catalog: Catalog, budget: int,
                        options: dict | None = None) -> OracleResult:
    opts = dict(ORACLE_DEFAULTS)
    if options:
        opts.update(options)
    if g.n > opts["node_cap"]:
        raise ValueError(f"oracle caps out at {opts['node_cap']} nodes, got {g.n}")
    sets = compute_dependency_sets(g, opts["bound_kind"])
    mm = MemModel(g, sets, catalog)
    nb = mm.n_storables
    if nb > opts["storable_cap"]:
        raise ValueError(f"oracle caps out at {opts['storable_cap']} storables, got {nb}")

    storables = g.storables
    fwd_bits = [b for b in range(nb) if not storables[b].is_intermediate]
    fwd_mask = 0
    for b in fwd_bits:
        fwd_mask |= 1 << b
    dep_bits = [0] * nb
    creator_bit = [0] * nb
    for b in range(nb):
        u = storables[b]
        if u.is_intermediate:
            creator_bit[b] = mm.bit_of_id[u.creator]
        else:
            for j in g.deps(u.id):
                dep_bits[b] |= 1 << mm.bit_of_id[j]
    avail = [0] * (g.n + 1)
    for b in range(nb):
        for i in range(storables[b].pos, g.n + 1):
            avail[i] |= 1 << b

    # cheapest-first implementation order per node
    variant_order = {}
    for i in range(1, g.n + 1):
        order = sorted(range(len(catalog.fwd(i))),
                       key=lambda l: (catalog.fwd(i)[l].cost, l))
        variant_order[i] = [(l, catalog.fwd(i)[l]) for l in order]

    enumerated = 0

    # forward pass: cheapest feasible implementation per node, per store row
    dp_prev: dict[int, Fraction] = {}
    fwd_plan: dict[int, tuple[int, ...]] = {}
    for mask in range(1 << nb):
        enumerated += 1
        total = Fraction(0)
        impls = []
        ok = True
        for i in range(1, g.n + 1):
            best = None
            for l, variant in variant_order[i]:
                if mm.forward_mem(i, variant, mask) <= budget:
                    best = l
                    break
            if best is None:
                ok = False
                break
            impls.append(best)
            total += catalog.fwd(i)[best].cost
        if ok:
            dp_prev[mask] = total
            fwd_plan[mask] = tuple(impls)

    n_stages = mm.n_stages
    parents: list[dict[int, tuple]] = []
    for t in range(1, n_stages + 1):
        k = mm.stage_node[t]
        n_bwd_variants = len(catalog.bwd(k))
        cur_candidates = [0] if t == n_stages else list(_submasks(avail[k]))

        # (l, C) -> (backward peak, settled profile, active constants)
        profile_cache: dict[tuple[int, int], tuple] = {}

        dp_new: dict[int, tuple[Fraction, tuple]] = {}
        parent: dict[int, tuple] = {}
        for P in sorted(dp_prev):
            base_cost = dp_prev[P]
            tail_bytes = [0] * (k + 1)
            for i in range(1, k + 1):
                tail_bytes[i] = mm.bytes_of(P & mm.tail_mask[i])
            for C in cur_candidates:
                for l in range(n_bwd_variants):
                    enumerated += 1
                    prof = profile_cache.get((l, C))
                    if prof is None:
                        bhat = mm.backward_mem(t, l, C)
                        sett = [0] * (k + 1)
                        act_const = [0] * (k + 1)
                        base = sets.grad_live_bytes[k] + g.params_bytes
                        for i in range(1, k + 1):
                            sett[i] = (base + mm.inactive_dep_bytes[(t, l, i)]
                                       + mm.bytes_of(C & mm.inactive_alpha_mask[(t, l, i)]))
                            act_const[i] = (mm.active_base[(t, i)]
                                            + mm.active_dep_bytes[(t, l, i)]
                                            + mm.bytes_of(C & mm.active_alpha_mask[(t, l, i)]))
                        prof = (bhat, sett, act_const)
                        profile_cache[(l, C)] = prof
                    bhat, sett, act_const = prof
                    if bhat > budget:
                        continue

                    r = (C & ~P) | (mm.d_mask[(t, l)] & ~C)
                    frontier = r
                    while frontier:
                        low = frontier & -frontier
                        frontier &= frontier - 1
                        b = low.bit_length() - 1
                        if low & fwd_mask:
                            need = dep_bits[b] & ~C & ~r
                        else:
                            need = (1 << creator_bit[b]) & ~r
                        r |= need
                        frontier |= need
                    if r & ~avail[k]:
                        continue

                    stage_cost = catalog.bwd(k)[l].cost
                    impls = []
                    feasible = True
                    for i in range(1, k + 1):
                        tb = tail_bytes[i]
                        bit = 1 << mm.bit_of_id[i]
                        if r & bit:
                            chosen = None
                            for lidx, variant in variant_order[i]:
                                if variant.workspace_bytes + act_const[i] + tb <= budget:
                                    chosen = lidx
                                    break
                            if chosen is None:
                                feasible = False
                                break
                            impls.append((i, chosen))
                            stage_cost += catalog.fwd(i)[chosen].cost
                        elif sett[i] + tb > budget:
                            feasible = False
                            break
                    if not feasible:
                        continue

                    total = base_cost + stage_cost
                    record = (total, (P, l, r, tuple(impls)))
                    old = dp_new.get(C)
                    if (old is None or total < old[0]
                            or (total == old[0] and (P, l) < (old[1][0], old[1][1]))):
                        dp_new[C] = record
                        parent[C] = record[1]
        parents.append(parent)
        dp_prev = {C: rec[0] for C, rec in dp_new.items()}

    if n_stages == 0:
        if not dp_prev:
            return OracleResult(False, None, None, enumerated, None, None)
        best_mask = min(dp_prev, key=lambda m: (dp_prev[m], m))
        schedule = Schedule(
            forward_impls=tuple(catalog.fwd(i)[l].name
                                for i, l in zip(range(1, g.n + 1), fwd_plan[best_mask])),
            forward_store=tuple(mm.ids_from_mask(best_mask)),
            stages=(),
            objective=dp_prev[best_mask],
        )
        ok, model_peak, _ = check_schedule(g, sets, catalog, schedule, budget)
        assert ok
        trace = simulate(schedule, g, catalog)
        return OracleResult(True, dp_prev[best_mask], schedule, enumerated,
                            model_peak, trace.peak_memory)

    if 0 not in dp_prev:
        return OracleResult(False, None, None, enumerated, None, None)
    optimum = dp_prev[0]

    # walk parent pointers back to the forward row
    rows = [0] * (n_stages + 1)
    stage_info: list[tuple] = [None] * (n_stages + 1)
    cur = 0
    for t in range(n_stages, 0, -1):
        P, l, r, impls = parents[t - 1][cur]
        rows[t] = cur
        stage_info[t] = (l, r, impls)
        cur = P
    rows[0] = cur

    stages = []
    for t in range(1, n_stages + 1):
        k = mm.stage_node[t]
        l, r, impls = stage_info[t]
        impl_by_node = dict(impls)
        rec = []
        for b in range(nb):
            if not (r >> b) & 1:
                continue
            u = storables[b]
            if u.is_intermediate:
                rec.append((u.id, None))
            else:
                rec.append((u.id, catalog.fwd(u.id)[impl_by_node[u.id]].name))
        stages.append(StagePlan(
            node=k,
            recompute=tuple(rec),
            store=tuple(mm.ids_from_mask(rows[t])),
            backward_impl=catalog.bwd(k)[l].name,
            inplace=(),
        ))
    schedule = Schedule(
        forward_impls=tuple(catalog.fwd(i)[l].name
                            for i, l in zip(range(1, g.n + 1), fwd_plan[rows[0]])),
        forward_store=tuple(mm.ids_from_mask(rows[0])),
        stages=tuple(stages),
        objective=optimum,
    )
    ok, model_peak, bad = check_schedule(g, sets, catalog, schedule, budget)
    if not ok:
        raise RuntimeError(f"oracle produced a schedule its own model rejects: {bad}")
    trace = simulate(schedule, g, catalog)
    if trace.total_cost != optimum:
        raise RuntimeError("oracle optimum does not match its schedule's simulated cost")
    return OracleResult(True, optimum, schedule, enumerated, model_peak,
                        trace.peak_memory)


def check_schedule(g: Graph, sets, catalog: Catalog, schedule: Schedule,
                   budget: int) -> tuple[bool, int, list[str]]:
    """Evaluate every modeled memory state of a schedule against a budget.

    Returns (feasible, modeled peak, violation tags). Purely a memory
    check; run validate() for structural problems first.
    """
    mm = MemModel(g, sets, catalog)
    tags: list[str] = []
    peak = 0
    store0 = mm.mask_from_ids(schedule.forward_store)
    for i in range(1, g.n + 1):
        variant = catalog.fwd(i)[catalog.fwd_index(i, schedule.forward_impls[i - 1])]
        m = mm.forward_mem(i, variant, store0)
        peak = max(peak, m)
        if m > budget:
            tags.append(f"forward-mem[n{i}]")
    prev = store0
    for t, st in zip(range(1, len(schedule.stages) + 1), schedule.stages):
        k = st.node
        l = catalog.bwd_index(k, st.backward_impl)
        cur = mm.mask_from_ids(st.store)
        m = mm.backward_mem(t, l, cur)
        peak = max(peak, m)
        if m > budget:
            tags.append(f"backward-mem[t{t}]")
        rec = {u: impl for u, impl in st.recompute
               if not g.storable_by_id[u].is_intermediate}
        for i in range(1, k + 1):
            if i in rec:
                variant = catalog.fwd(i)[catalog.fwd_index(i, rec[i])]
                m = mm.recompute_mem_active(t, l, i, variant, prev, cur)
                tag = f"recompute-mem[t{t},n{i}]"
            else:
                m = mm.recompute_mem_inactive(t, l, i, prev, cur)
                tag = f"settled-mem[t{t},n{i}]"
            peak = max(peak, m)
            if m > budget:
                tags.append(tag)
        prev = cur
    return (not tags, peak, tags)


def cross_check(g: Graph, catalog: Catalog, budgets, options: dict | None = None) -> dict:
    """Solve and enumerate the same instance over several budgets and compare.

    The solver and the oracle share only the graph and catalog; schedules
    from the solver are re-validated, re-priced by simulation, and checked
    against the oracle's memory model. Any discrepancy lands in
    'counterexamples' with enough context to replay it.
    """
    from .ilp import build_model
    from .solver import solve

    opts = {"bound_kind": "upper", "inplace": True, "solve": {}, "oracle": {}}
    if options:
        opts.update(options)
    sets = compute_dependency_sets(g, opts["bound_kind"])
    cells = []
    counterexamples = []
    for budget in budgets:
        model = build_model(g, sets, catalog, budget,
                            {"inplace": opts["inplace"],
                             "bound_kind": opts["bound_kind"]})
        res = solve(model, dict(opts["solve"]))
        orc_opts = {"bound_kind": opts["bound_kind"]}
        orc_opts.update(opts["oracle"])
        orc = enumerate_schedules(g, catalog, budget, orc_opts)

        problems: list[str] = []
        solver_doc = None
        if res.status == "optimal":
            if not orc.feasible:
                problems.append("solver found an optimum where the oracle found "
                                "no feasible schedule")
            elif res.objective != orc.optimum:
                problems.append(f"objective mismatch: solver {format_cost(res.objective)}"
                                f" vs oracle {format_cost(orc.optimum)}")
            if orc.feasible:
                sched = None
                try:
                    from .schedule import decode
                    sched = decode(res, g, catalog)
                    solver_doc = schedule_to_doc(sched)
                except ValueError as exc:
                    problems.append(f"decode failed: {exc}")
                if sched is not None:
                    bad = validate(sched, g, sets, catalog)
                    if bad:
                        problems.append(f"solver schedule invalid: {bad}")
                    else:
                        ok, model_peak, tags = check_schedule(g, sets, catalog,
                                                              sched, budget)
                        if not ok:
                            problems.append(f"solver schedule over budget in the "
                                            f"oracle's accounting: {tags}")
                        trace = simulate(sched, g, catalog)
                        if trace.total_cost != res.objective:
                            problems.append(
                                f"simulated cost {format_cost(trace.total_cost)} "
                                f"!= objective {format_cost(res.objective)}")
                        if trace.peak_memory > budget:
                            problems.append(f"simulated peak {trace.peak_memory} "
                                            f"exceeds budget {budget}")
        elif res.status == "infeasible":
            if orc.feasible:
                problems.append("solver reported infeasible but the oracle found "
                                f"a schedule costing {format_cost(orc.optimum)}")
        else:
            problems.append(f"solver stopped early with status {res.status}")

        cell = {
            "budget": budget,
            "solver_status": res.status,
            "solver_objective": None if res.objective is None else format_cost(res.objective),
            "solver_nodes": res.nodes,
            "oracle_feasible": orc.feasible,
            "oracle_objective": None if orc.optimum is None else format_cost(orc.optimum),
            "oracle_enumerated": orc.enumerated_count,
            "oracle_model_peak": orc.model_peak,
            "oracle_true_peak": orc.true_peak,
            "agree": not problems,
            "problems": problems,
        }
        cells.append(cell)
        if problems:
            counterexamples.append({
                "budget": budget,
                "problems": problems,
                "graph": graph_to_doc(g),
                "catalog": catalog_to_doc(catalog),
                "solver_schedule": solver_doc,
                "oracle_schedule": None if orc.schedule is None
                else schedule_to_doc(orc.schedule),
            })
    return {
        "pass": all(c["agree"] for c in cells),
        "bound_kind": opts["bound_kind"],
        "inplace": opts["inplace"],
        "cells": cells,
        "counterexamples": counterexamples,
    }


enumerate = enumerate_schedules
