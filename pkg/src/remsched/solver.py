"""Exact 0-1 branch-and-bound over the scheduling model.

Depth-first search with incremental bound propagation: every row keeps
running minimum/maximum activity over the unfixed variables, fixing a
variable updates the rows it appears in, and any row whose range leaves
its feasible window forces further fixings or fails the subtree. The
admissible lower bound sums, per one-hot group, the cheapest
implementation still available (recompute groups count only once their
R variable is fixed on). First-found incumbents are kept on objective
ties, so results are deterministic for a given branch order.

Search order ("paper", the default): backward implementations, then
forward implementations, then rematerialization flags column by column
trying "skip" first, then store rows trying "drop" first, then the
remaining choice variables. "fixed" branches in variable registration
order; "most-tight" picks the unfixed variable sitting in the most
currently tight rows. An ``incumbent`` option seeds the search with a
known-feasible assignment so pruning starts from its objective. Without
a time or node limit the search path is fully deterministic; telemetry
carries wall-clock milliseconds and is meant to be kept out of
byte-compared artifacts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

from .ilp import Model, evaluate_assignment
from .units import cost_str

BRANCH_ORDERS = ("paper", "fixed", "most-tight")

# kinds whose variables are tried at 1 first while diving; stores are
# dived at 0 because the reach, needs and carry rows force every store
# an incumbent actually requires
_PREF1 = {"DeltaFwd", "DeltaBwd", "DeltaRe"}


@dataclass
class SolveResult:
    status: str  # optimal | feasible-gap | infeasible | timeout-no-incumbent
    objective: Fraction | None
    assignment: list[int] | None
    lower_bound: Fraction | None
    gap: Fraction | None
    nodes: int
    elapsed_s: float
    telemetry: list[dict]
    model: Model


class _Propagator:
    def __init__(self, model: Model):
        n = model.n_vars
        self.val = [-1] * n
        self.trail: list[int] = []
        self.row_terms: list[tuple[tuple[int, int], ...]] = []
        self.row_ub: list[int | None] = []
        self.row_lb: list[int | None] = []
        self.minact: list[int] = []
        self.maxact: list[int] = []
        self.watch: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for row in model.rows:
            ridx = len(self.row_terms)
            self.row_terms.append(row.terms)
            self.row_ub.append(row.rhs)
            self.row_lb.append(row.rhs if row.sense == "=" else None)
            lo = hi = 0
            for v, c in row.terms:
                if c < 0:
                    lo += c
                else:
                    hi += c
                self.watch[v].append((ridx, c))
            self.minact.append(lo)
            self.maxact.append(hi)
        self._queued = [False] * len(self.row_terms)
        # largest |coefficient| per row: a row whose slack is at least
        # this big cannot force anything, so propagation skips it
        self.row_maxabs = [max((abs(c) for _, c in terms), default=0)
                           for terms in self.row_terms]

    def fix(self, v: int, b: int, queue: list[int]) -> bool:
        cur = self.val[v]
        if cur >= 0:
            return cur == b
        self.val[v] = b
        self.trail.append(v)
        # on conflict, keep updating the remaining rows anyway: undo_to
        # reverses the whole watch list, so activities must stay in step
        ok = True
        minact = self.minact
        maxact = self.maxact
        row_ub = self.row_ub
        row_lb = self.row_lb
        queued = self._queued
        for ridx, c in self.watch[v]:
            if b:
                if c > 0:
                    minact[ridx] += c
                else:
                    maxact[ridx] += c
            else:
                if c < 0:
                    minact[ridx] -= c
                else:
                    maxact[ridx] -= c
            ub = row_ub[ridx]
            if ub is not None and minact[ridx] > ub:
                ok = False
            lb = row_lb[ridx]
            if lb is not None and maxact[ridx] < lb:
                ok = False
            if ok and not queued[ridx]:
                queued[ridx] = True
                queue.append(ridx)
        return ok

    def propagate(self, queue: list[int]) -> bool:
        head = 0
        val = self.val
        minact = self.minact
        maxact = self.maxact
        row_ub = self.row_ub
        row_lb = self.row_lb
        row_maxabs = self.row_maxabs
        queued = self._queued
        row_terms = self.row_terms
        while head < len(queue):
            ridx = queue[head]
            head += 1
            queued[ridx] = False
            mab = row_maxabs[ridx]
            ub = row_ub[ridx]
            if ub is not None and ub - minact[ridx] >= mab:
                ub = None
            lb = row_lb[ridx]
            if lb is not None and maxact[ridx] - lb >= mab:
                lb = None
            if ub is None and lb is None:
                continue
            for v, c in row_terms[ridx]:
                if val[v] != -1:
                    continue
                forced = -1
                if ub is not None:
                    if c > 0 and minact[ridx] + c > ub:
                        forced = 0
                    elif c < 0 and minact[ridx] - c > ub:
                        forced = 1
                if forced == -1 and lb is not None:
                    if c > 0 and maxact[ridx] - c < lb:
                        forced = 1
                    elif c < 0 and maxact[ridx] + c < lb:
                        forced = 0
                if forced != -1:
                    if not self.fix(v, forced, queue):
                        for r in queue:
                            queued[r] = False
                        queue.clear()
                        return False
        queue.clear()
        return True

    def assign_and_propagate(self, v: int, b: int) -> bool:
        queue: list[int] = []
        if not self.fix(v, b, queue):
            for ridx in queue:
                self._queued[ridx] = False
            return False
        return self.propagate(queue)

    def undo_to(self, mark: int) -> None:
        trail = self.trail
        val = self.val
        minact = self.minact
        maxact = self.maxact
        while len(trail) > mark:
            v = trail.pop()
            b = val[v]
            val[v] = -1
            for ridx, c in self.watch[v]:
                if b:
                    if c > 0:
                        minact[ridx] -= c
                    else:
                        maxact[ridx] -= c
                else:
                    if c < 0:
                        minact[ridx] += c
                    else:
                        maxact[ridx] += c


def _group_min(prop: _Propagator, group: list[tuple[int, int]]) -> int:
    val = prop.val
    best = None
    for v, cost in group:
        b = val[v]
        if b == 1:
            return cost
        if b == 0:
            continue
        if best is None or cost < best:
            best = cost
    return best if best is not None else 0


class _Surrogate:
    """Capacity-driven recompute bound.

    Every tensor a stage's backward must read is either kept in each
    store row from row 1 through that stage (paying bytes against the
    stage rows it crosses) or rebuilt at a cost no lower than its
    cheapest implementation. Each stage's backward-execution row caps
    the bytes its store row can hold at budget - params - gradients -
    minimum workspace. For one stage, (stored demand over capacity) x
    (cheapest cost per byte among undecided tensors) lower-bounds the
    recompute cost that must be paid; the max over stages is still a
    valid bound. Tensors whose recompute is already fixed on are
    priced by the main bound instead and claim no row bytes here.
    """

    def __init__(self, model: Model, scale: int = 1):
        from .ilp import VarId

        g, sets, catalog = model.g, model.sets, model.catalog
        self.cap_base = model.budget - g.params_bytes
        self.n_stages = len(g.stage_nodes)
        self.stages = []
        for t, k in zip(range(1, self.n_stages + 1), g.stage_nodes):
            variants = []
            for l, bv in enumerate(catalog.bwd(k)):
                variants.append((model.bwd_groups[t - 1][l][0],
                                 bv.workspace_bytes, frozenset(bv.deps)))
            self.stages.append((sets.grad_live_bytes[k], variants))
        self.size = {u.id: u.nbytes for u in g.storables}
        self.recost = {}
        self.rcol = {}
        for u in g.storables:
            if u.is_intermediate:
                self.recost[u.id] = 0
            else:
                c = min(v.cost for v in catalog.fwd(u.id)) * scale
                self.recost[u.id] = int(c)
            self.rcol[u.id] = [model.var_index[VarId("R", row=t, node=u.id)]
                               for t in range(1, self.n_stages + 1)]

    def extra(self, val) -> int | None:
        """Forced extra scaled cost under the partial assignment; None = infeasible."""
        if self.n_stages == 0:
            return 0
        need_last: dict[int, int] = {}
        alive_by_stage: list[list[tuple[int, frozenset[int]]] | None] = \
            [None] * (self.n_stages + 1)
        for ti in range(self.n_stages):
            _, variants = self.stages[ti]
            alive = [(ws, deps) for v, ws, deps in variants if val[v] != 0]
            if not alive:
                continue
            alive_by_stage[ti + 1] = alive
            dmin = alive[0][1]
            for _, deps in alive[1:]:
                dmin = dmin & deps
            for u in dmin:
                if need_last.get(u, 0) < ti + 1:
                    need_last[u] = ti + 1
        mandatory: list[tuple[int, int, int]] = []
        open_items: list[tuple[int, int, int, int]] = []
        for u in sorted(need_last):
            tu = need_last[u]
            col = self.rcol[u]
            fixed_on = False
            all_off = True
            for t in range(tu):
                b = val[col[t]]
                if b == 1:
                    fixed_on = True
                    break
                if b != 0:
                    all_off = False
            if fixed_on:
                continue
            if all_off:
                mandatory.append((u, self.size[u], tu))
            elif self.size[u] > 0:
                open_items.append((u, self.size[u], self.recost[u], tu))
        extra = 0
        for t in range(1, self.n_stages + 1):
            alive = alive_by_stage[t]
            if alive is None:
                continue
            # bytes charged against this row below; anything a variant
            # reads beyond them sits in the row on top of the charge
            charged = {u for u, _, tu in mandatory if tu >= t}
            charged.update(u for u, _, _, tu in open_items if tu >= t)
            grad = self.stages[t - 1][0]
            cap = self.cap_base - grad - min(
                ws + sum(self.size[u] for u in deps if u not in charged)
                for ws, deps in alive)
            avail = cap - sum(sz for _, sz, tu in mandatory if tu >= t)
            items = [(sz, c) for _, sz, c, tu in open_items if tu >= t]
            total = sum(sz for sz, _ in items)
            if avail < 0:
                return None
            if total <= avail or not items:
                continue
            # cheapest scaled cost per byte, compared by cross products
            bc, bsz = items[0][1], items[0][0]
            for sz, c in items[1:]:
                if c * bsz < bc * sz:
                    bc, bsz = c, sz
            # any achievable scaled objective is an integer, so the
            # fractional per-byte charge rounds up
            cand = -(-(total - avail) * bc // bsz)
            if cand > extra:
                extra = cand
        return extra


def _bound(prop: _Propagator, model: Model,
           surro: _Surrogate | None = None,
           integral: bool = False) -> Fraction | None:
    total = Fraction(0)
    for group in model.fwd_groups:
        total += _group_min(prop, group)
    for group in model.bwd_groups:
        total += _group_min(prop, group)
    for rvar, group in model.re_groups:
        if prop.val[rvar] == 1 and group:
            total += _group_min(prop, group)
    if surro is not None:
        extra = surro.extra(prop.val)
        if extra is None:
            return None
        total += extra
    if integral and total.denominator != 1:
        # with an all-integer objective over binaries, any achievable
        # value is an integer, so a fractional bound rounds up
        total = Fraction(-(-total.numerator // total.denominator))
    return total


def _static_order(model: Model, mode: str) -> list[int]:
    """Static branching order.

    The default order fixes implementation choices first, then dives the
    recompute flags toward zero before touching store rows: once every
    recompute flag in a subtree is down, the carry and needs rows force
    whole store columns by propagation, so the zero-recompute subspace
    collapses without enumerating store combinations.
    """
    if mode == "fixed":
        return list(range(model.n_vars))
    order: list[int] = []
    for group in model.bwd_groups:
        order.extend(v for v, _ in sorted(group, key=lambda vc: (vc[1], vc[0])))
    for group in model.fwd_groups:
        order.extend(v for v, _ in sorted(group, key=lambda vc: (vc[1], vc[0])))
    by_kind: dict[str, list[int]] = {}
    for idx, vid in enumerate(model.var_ids):
        by_kind.setdefault(vid.kind, []).append(idx)
    # column-major: finish one tensor's recompute column before the next,
    # so the reach rows force its row-0 store bit as early as possible
    r_vars = by_kind.get("R", [])
    r_vars.sort(key=lambda v: (model.var_ids[v].node, model.var_ids[v].row))
    order.extend(r_vars)
    for _, group in model.re_groups:
        order.extend(v for v, _ in sorted(group, key=lambda vc: (vc[1], vc[0])))
    order.extend(by_kind.get("S", []))
    order.extend(by_kind.get("Q", []))
    order.extend(by_kind.get("P", []))
    order.extend(by_kind.get("Alpha", []))
    return order


def _pick_most_tight(prop: _Propagator, model: Model) -> int | None:
    best_v = None
    best_score = -1
    for v in range(model.n_vars):
        if prop.val[v] != -1:
            continue
        score = 0
        for ridx, _ in prop.watch[v]:
            ub = prop.row_ub[ridx]
            if ub is not None and prop.minact[ridx] == ub:
                score += 1
        if score > best_score:
            best_score = score
            best_v = v
    return best_v


@dataclass
class _Frame:
    var: int
    values: tuple[int, ...]
    tried: int
    mark: int
    order_pos: int
    entry_bound: Fraction


def propagate(model: Model, partial: dict[int, int] | None = None):
    """Fixpoint propagation from the model fixings plus *partial*.

    Returns (consistent, fixed) where fixed maps variable index to value
    for everything decided so far.
    """
    prop = _Propagator(model)
    queue: list[int] = []
    for v, b in model.fixed.items():
        if not prop.fix(v, b, queue):
            return False, {}
    for v, b in (partial or {}).items():
        if not prop.fix(v, b, queue):
            return False, {}
    if not prop.propagate(queue):
        return False, {}
    return True, {v: prop.val[v] for v in range(model.n_vars) if prop.val[v] != -1}


def lower_bound(model: Model, partial: dict[int, int] | None = None) -> Fraction | None:
    """Admissible objective bound under *partial*; None if already inconsistent."""
    prop = _Propagator(model)
    queue: list[int] = []
    for v, b in model.fixed.items():
        if not prop.fix(v, b, queue):
            return None
    for v, b in (partial or {}).items():
        if not prop.fix(v, b, queue):
            return None
    if not prop.propagate(queue):
        return None
    integral = all(c.denominator == 1 for _, c in model.objective)
    return _bound(prop, model, _Surrogate(model), integral)


def solve(model: Model, options: dict | None = None) -> SolveResult:
    options = dict(options or {})
    time_limit = options.get("time_limit_s")
    node_limit = options.get("node_limit")
    gap_target = options.get("gap_target")
    if gap_target is not None:
        gap_target = Fraction(gap_target)
    branch_order = options.get("branch_order", "paper")
    if branch_order not in BRANCH_ORDERS:
        raise ValueError(f"branch_order must be one of {BRANCH_ORDERS}")
    dive = options.get("dive", "bound")
    if dive not in ("bound", "static"):
        raise ValueError(f"dive must be 'bound' or 'static', got {dive!r}")
    dive_bound = dive == "bound"
    telemetry_every = int(options.get("telemetry_every", 8192))
    surro = _Surrogate(model) if options.get("bound", "surrogate") == "surrogate" else None
    integral = all(c.denominator == 1 for _, c in model.objective)

    start = time.monotonic()
    telemetry: list[dict] = []
    nodes = 0

    def emit(event: str, incumbent, bound, gap) -> None:
        telemetry.append({
            "event": event,
            "nodes": nodes,
            "elapsed_ms": int((time.monotonic() - start) * 1000),
            "incumbent": None if incumbent is None else cost_str(incumbent),
            "bound": None if bound is None else cost_str(bound),
            "gap": None if gap is None else cost_str(gap),
        })

    prop = _Propagator(model)
    queue: list[int] = []
    root_ok = True
    for v, b in model.fixed.items():
        if not prop.fix(v, b, queue):
            root_ok = False
            break
    if root_ok:
        root_ok = prop.propagate(queue)
    if not root_ok:
        emit("final", None, None, None)
        return SolveResult("infeasible", None, None, None, None, 0,
                           time.monotonic() - start, telemetry, model)

    order = _static_order(model, branch_order)
    pref = [1 if vid.kind in _PREF1 else 0 for vid in model.var_ids]

    best: Fraction | None = None
    best_assign: list[int] | None = None
    frames: list[_Frame] = []
    order_pos = 0
    stop_reason: str | None = None
    exhausted = False

    def frontier_bound() -> Fraction | None:
        cands = [f.entry_bound for f in frames if f.tried < len(f.values)]
        if not cands:
            return best
        out = cands[0]
        for c in cands[1:]:
            if c < out:
                out = c
        return out

    def gap_of(bound: Fraction | None) -> Fraction | None:
        if best is None or bound is None:
            return None
        if bound >= best:
            return Fraction(0)
        if best == 0:
            return None
        return (best - bound) / best

    def pick_var() -> int | None:
        nonlocal order_pos
        if branch_order == "most-tight":
            return _pick_most_tight(prop, model)
        while order_pos < len(order) and prop.val[order[order_pos]] != -1:
            order_pos += 1
        return order[order_pos] if order_pos < len(order) else None

    emit("root", None, _bound(prop, model, surro, integral), None)

    incumbent = options.get("incumbent")
    if incumbent is not None:
        seeded = evaluate_assignment(model, incumbent)
        if seeded["feasible"]:
            best = seeded["objective"]
            best_assign = [int(x) for x in incumbent]
            emit("warm-start", best, None, None)

    # descending: the current propagated state is a fresh node to branch on.
    # Otherwise the state belongs to frames[-1], whose next value is due.
    descending = True
    while True:
        if nodes and nodes % 256 == 0:
            if time_limit is not None and time.monotonic() - start > time_limit:
                stop_reason = "limit"
                break
            if node_limit is not None and nodes >= node_limit:
                stop_reason = "limit"
                break

        if descending:
            entry_bound = _bound(prop, model, surro, integral)
            pruned = entry_bound is None or (best is not None and entry_bound >= best)
            v = None if pruned else pick_var()
            if v is not None:
                values = (pref[v], 1 - pref[v])
                if dive_bound:
                    # probe both children and walk into the more promising
                    # one; a child whose bound already loses is dropped here
                    mark = len(prop.trail)
                    scored = []
                    for b in values:
                        if prop.assign_and_propagate(v, b):
                            cb = _bound(prop, model, surro, integral)
                            if cb is not None and (best is None or cb < best):
                                scored.append((cb, b))
                        prop.undo_to(mark)
                    scored.sort(key=lambda cb_b: cb_b[0])
                    if not scored:
                        if not frames:
                            exhausted = True
                            break
                        descending = False
                        continue
                    values = tuple(b for _, b in scored)
                frames.append(_Frame(v, values, 0,
                                     len(prop.trail), order_pos, entry_bound))
            else:
                if not pruned:
                    obj = sum((c * prop.val[i] for i, c in model.objective), Fraction(0))
                    if best is None or obj < best:
                        best = obj
                        best_assign = list(prop.val)
                        bound = frontier_bound()
                        emit("incumbent", best, bound, gap_of(bound))
                        if gap_target is not None:
                            g = gap_of(bound)
                            if g is not None and g <= gap_target:
                                stop_reason = "gap"
                                break
                if not frames:
                    exhausted = True
                    break
                descending = False
                continue

        frame = frames[-1]
        prop.undo_to(frame.mark)
        order_pos = frame.order_pos
        if best is not None and frame.entry_bound >= best:
            frame.tried = len(frame.values)
        advanced = False
        while frame.tried < len(frame.values):
            b = frame.values[frame.tried]
            frame.tried += 1
            nodes += 1
            if nodes % telemetry_every == 0:
                bound = frontier_bound()
                emit("tick", best, bound, gap_of(bound))
                if gap_target is not None and best is not None:
                    g = gap_of(bound)
                    if g is not None and g <= gap_target:
                        stop_reason = "gap"
                        break
            if prop.assign_and_propagate(frame.var, b):
                advanced = True
                break
            prop.undo_to(frame.mark)
        if stop_reason:
            break
        if advanced:
            descending = True
            continue
        frames.pop()
        prop.undo_to(frame.mark)
        order_pos = frame.order_pos
        if not frames:
            exhausted = True
            break
        descending = False

    elapsed = time.monotonic() - start

    if exhausted:
        if best is None:
            emit("final", None, None, None)
            return SolveResult("infeasible", None, None, None, None, nodes,
                               elapsed, telemetry, model)
        emit("final", best, best, Fraction(0))
        return SolveResult("optimal", best, best_assign, best, Fraction(0),
                           nodes, elapsed, telemetry, model)

    bound = frontier_bound()
    if best is None:
        emit("final", None, bound, None)
        return SolveResult("timeout-no-incumbent", None, None, bound, None,
                           nodes, elapsed, telemetry, model)
    g = gap_of(bound)
    if g == 0:
        emit("final", best, best, Fraction(0))
        return SolveResult("optimal", best, best_assign, best, Fraction(0),
                           nodes, elapsed, telemetry, model)
    emit("final", best, bound, g)
    return SolveResult("feasible-gap", best, best_assign, bound, g,
                       nodes, elapsed, telemetry, model)
