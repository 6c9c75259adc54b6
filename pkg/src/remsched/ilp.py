"""0-1 integer program for joint checkpointing and implementation choice.

Variables (all binary):

  DeltaFwd(i,l)   forward step i runs implementation l
  DeltaBwd(t,l)   backward stage t runs implementation l
  S(row,u)        storable u is held in store row `row` (0 = forward row)
  R(t,u)          storable u is rematerialized during stage t's sweep
  DeltaRe(t,i,l)  that rematerialization of node i uses implementation l
  Q(t,i)          stage t recomputes node i in place over its input
  P(t,j)          node j's output may still be read by stage-t recomputes
  Alpha(t,l,u)    product DeltaBwd(t,l) * S(t,u), linearized

The objective is total compute cost; every memory row bounds one
transient peak state (forward step, backward execution, or a recompute
sweep position in its active and settled forms) by the byte budget.
Structural rows tie the store rows together exactly like the simulator
executes them: stage t carries row t-1 in, drops anything not in row t
at stage start, rematerializes R(t), and hands row t to stage t+1. The
last row is fixed empty, so a backward dependency is only usable if it
sits in the stage's own output row or is rematerialized in-stage.

All memory coefficients are integers (bytes); only objective
coefficients are Fractions. Variable fixings (last row empty, no
rematerialization past the stage frontier) are recorded in
``Model.fixed`` and honored by the export, the evaluator, and the
solver.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction

from .costmodel import Catalog
from .graph import DependencySets, Graph
from .units import FormatError

VAR_KINDS = ("DeltaFwd", "DeltaBwd", "S", "R", "DeltaRe", "Q", "P", "Alpha")


@dataclass(frozen=True)
class VarId:
    kind: str
    row: int = -1      # store row for S; stage index for the rest
    node: int = -1     # node id or storable id
    variant: int = -1  # variant index where applicable

    def name(self) -> str:
        k = self.kind
        if k == "S":
            return f"s_{self.row}_{self.node}"
        if k == "R":
            return f"r_{self.row}_{self.node}"
        if k == "DeltaFwd":
            return f"df_{self.node}_{self.variant}"
        if k == "DeltaRe":
            return f"dr_{self.row}_{self.node}_{self.variant}"
        if k == "DeltaBwd":
            return f"db_{self.row}_{self.variant}"
        if k == "Q":
            return f"q_{self.row}_{self.node}"
        if k == "P":
            return f"p_{self.row}_{self.node}"
        return f"al_{self.row}_{self.variant}_{self.node}"


@dataclass(frozen=True)
class Row:
    terms: tuple[tuple[int, int], ...]  # (variable index, integer coefficient)
    sense: str                          # "<=" or "="
    rhs: int
    tag: str


@dataclass
class Model:
    g: Graph
    sets: DependencySets
    catalog: Catalog
    budget: int
    options: dict
    var_ids: list[VarId] = field(default_factory=list)
    var_index: dict[VarId, int] = field(default_factory=dict)
    rows: list[Row] = field(default_factory=list)
    objective: list[tuple[int, Fraction]] = field(default_factory=list)
    fixed: dict[int, int] = field(default_factory=dict)
    # one-hot groups for the solver's bound: (members, costs) per forward
    # node / backward stage, and per (stage, node) tied to its R variable
    fwd_groups: list[list[tuple[int, Fraction]]] = field(default_factory=list)
    bwd_groups: list[list[tuple[int, Fraction]]] = field(default_factory=list)
    re_groups: list[tuple[int, list[tuple[int, Fraction]]]] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.var_ids)

    def var(self, vid: VarId) -> int:
        return self.var_index[vid]

    def stats(self) -> dict:
        by_kind: dict[str, int] = {k: 0 for k in VAR_KINDS}
        for vid in self.var_ids:
            by_kind[vid.kind] += 1
        by_family: dict[str, int] = {}
        nonzeros = 0
        for row in self.rows:
            family = row.tag.split("[", 1)[0]
            by_family[family] = by_family.get(family, 0) + 1
            nonzeros += len(row.terms)
        return {
            "budget": self.budget,
            "vars": {**{k: v for k, v in by_kind.items() if v}, "total": self.n_vars},
            "fixed": len(self.fixed),
            "rows": {**dict(sorted(by_family.items())), "total": len(self.rows)},
            "nonzeros": nonzeros,
        }


def build_model(g: Graph, sets: DependencySets, catalog: Catalog,
                budget: int, options: dict | None = None) -> Model:
    options = dict(options or {})
    inplace = options.get("inplace", True)
    if "bound_kind" in options and options["bound_kind"] != sets.bound_kind:
        raise ValueError(
            f"options bound_kind {options['bound_kind']!r} does not match the "
            f"dependency sets ({sets.bound_kind!r})")
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")

    m = Model(g, sets, catalog, budget, options)
    storables = g.storables
    n_bits = len(storables)
    bit_of_id = {u.id: b for b, u in enumerate(storables)}
    sizes = [u.nbytes for u in storables]
    stages = g.stage_nodes
    n_stages = len(stages)

    def register(vid: VarId) -> int:
        idx = len(m.var_ids)
        m.var_ids.append(vid)
        m.var_index[vid] = idx
        return idx

    # -- variables ----------------------------------------------------------
    for i in range(1, g.n + 1):
        group = []
        for l, v in enumerate(catalog.fwd(i)):
            idx = register(VarId("DeltaFwd", node=i, variant=l))
            m.objective.append((idx, v.cost))
            group.append((idx, v.cost))
        m.fwd_groups.append(group)

    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        group = []
        for l, v in enumerate(catalog.bwd(k)):
            idx = register(VarId("DeltaBwd", row=t, variant=l))
            m.objective.append((idx, v.cost))
            group.append((idx, v.cost))
        m.bwd_groups.append(group)

    s_var: dict[tuple[int, int], int] = {}
    for row in range(0, n_stages + 1):
        for b in range(n_bits):
            s_var[(row, b)] = register(VarId("S", row=row, node=storables[b].id))
            if row == n_stages and n_stages > 0:
                m.fixed[s_var[(row, b)]] = 0

    r_var: dict[tuple[int, int], int] = {}
    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for b in range(n_bits):
            r_var[(t, b)] = register(VarId("R", row=t, node=storables[b].id))
            if storables[b].pos > k:
                m.fixed[r_var[(t, b)]] = 0

    dre: dict[tuple[int, int, int], int] = {}
    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for i in range(1, g.n + 1):
            group = []
            for l, v in enumerate(catalog.fwd(i)):
                idx = register(VarId("DeltaRe", row=t, node=i, variant=l))
                dre[(t, i, l)] = idx
                m.objective.append((idx, v.cost))
                group.append((idx, v.cost))
                if i > k:
                    m.fixed[idx] = 0
            m.re_groups.append((r_var[(t, bit_of_id[i])], group))

    # an in-place rewrite reuses the first input's buffer, so it only
    # exists for nodes whose output matches that input in size
    elig = [i for i in range(1, g.n + 1)
            if any(v.inplace_capable for v in catalog.fwd(i))
            and g.deps(i)
            and g.output_bytes(i) == g.output_bytes(g.deps(i)[0])]
    q_var: dict[tuple[int, int], int] = {}
    p_var: dict[tuple[int, int], int] = {}
    if inplace:
        for t in range(1, n_stages + 1):
            k = stages[t - 1]
            for i in elig:
                if i <= k:
                    q_var[(t, i)] = register(VarId("Q", row=t, node=i))
            p_nodes = sorted({g.deps(i)[0] for i in elig if i <= k})
            for j in p_nodes:
                p_var[(t, j)] = register(VarId("P", row=t, node=j))

    alpha: dict[tuple[int, int, int], int] = {}
    d_mask: dict[tuple[int, int], int] = {}
    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for l, v in enumerate(catalog.bwd(k)):
            dm = 0
            for d in v.deps:
                dm |= 1 << bit_of_id[d]
            d_mask[(t, l)] = dm
            for b in range(n_bits):
                if not (dm >> b) & 1:
                    alpha[(t, l, b)] = register(
                        VarId("Alpha", row=t, variant=l, node=storables[b].id))

    # -- structural rows ----------------------------------------------------
    def add(terms: list[tuple[int, int]], sense: str, rhs: int, tag: str) -> None:
        m.rows.append(Row(tuple(terms), sense, rhs, tag))

    for i in range(1, g.n + 1):
        add([(v, 1) for v, _ in m.fwd_groups[i - 1]], "=", 1, f"choose-forward[n{i}]")

    for t in range(1, n_stages + 1):
        add([(v, 1) for v, _ in m.bwd_groups[t - 1]], "=", 1, f"choose-backward[t{t}]")

    for t in range(1, n_stages + 1):
        for i in range(1, g.n + 1):
            terms = [(dre[(t, i, l)], 1) for l in range(len(catalog.fwd(i)))]
            terms.append((r_var[(t, bit_of_id[i])], -1))
            add(terms, "=", 0, f"recompute-impl[t{t},n{i}]")

    for t in range(1, n_stages + 1):
        for b in range(n_bits):
            add([(s_var[(t, b)], 1), (s_var[(t - 1, b)], -1), (r_var[(t, b)], -1)],
                "<=", 0, f"store-carry[t{t},u{storables[b].id}]")

    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for i in range(1, k + 1):
            for j in g.deps(i):
                rhs_var = p_var.get((t, j), r_var[(t, bit_of_id[j])])
                add([(r_var[(t, bit_of_id[i])], 1),
                     (s_var[(t, bit_of_id[j])], -1),
                     (rhs_var, -1)],
                    "<=", 0, f"recompute-deps[t{t},n{i},d{j}]")
        for u in storables:
            if not u.is_intermediate or u.pos > k:
                continue
            b = bit_of_id[u.id]
            add([(r_var[(t, b)], 1), (r_var[(t, bit_of_id[u.creator])], -1)],
                "<=", 0, f"intermediate-with-creator[t{t},u{u.id}]")
            terms = [(r_var[(t, b)], 1), (s_var[(t, b)], -1)]
            for l in range(len(catalog.bwd(k))):
                if (d_mask[(t, l)] >> b) & 1:
                    terms.append((m.bwd_groups[t - 1][l][0], -1))
            add(terms, "<=", 0, f"intermediate-usefulness[t{t},u{u.id}]")

    # a rebuilt forward tensor must go somewhere: into the stage row, into
    # the backward step, or into a rebuild that reads it during the same
    # sweep.  Dropping a rebuild that feeds none of these leaves every other
    # row satisfied and never raises a memory state, so restricting to
    # justified rebuilds keeps the optimum while letting propagation reject
    # pointless recompute positions outright.
    consumers_of: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for c in range(1, g.n + 1):
        for j in g.deps(c):
            consumers_of[j].append(c)
    ints_of: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for u in storables:
        if u.is_intermediate:
            ints_of[u.creator].append(u.id)
    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for u in storables:
            if u.is_intermediate or u.pos > k:
                continue
            b = bit_of_id[u.id]
            terms = [(r_var[(t, b)], 1), (s_var[(t, b)], -1)]
            for l in range(len(catalog.bwd(k))):
                if (d_mask[(t, l)] >> b) & 1:
                    terms.append((m.bwd_groups[t - 1][l][0], -1))
            for c in consumers_of[u.id]:
                if c <= k:
                    terms.append((r_var[(t, bit_of_id[c])], -1))
            for w in ints_of[u.id]:
                terms.append((r_var[(t, bit_of_id[w])], -1))
            add(terms, "<=", 0, f"recompute-usefulness[t{t},u{u.id}]")

    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for l, v in enumerate(catalog.bwd(k)):
            for d in v.deps:
                b = bit_of_id[d]
                add([(m.bwd_groups[t - 1][l][0], 1),
                     (s_var[(t, b)], -1), (r_var[(t, b)], -1)],
                    "<=", 0, f"backward-needs[t{t},l{l},u{d}]")

    # telescoped store-carry composed with backward-needs: a dependency is
    # either kept from the forward pass or rebuilt no later than its
    # consuming stage; implied by the rows above but propagation-visible
    # long before individual store rows are decided
    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        for l, v in enumerate(catalog.bwd(k)):
            for d in v.deps:
                b = bit_of_id[d]
                terms = [(m.bwd_groups[t - 1][l][0], 1), (s_var[(0, b)], -1)]
                for t2 in range(1, t + 1):
                    terms.append((r_var[(t2, b)], -1))
                add(terms, "<=", 0, f"reach[t{t},l{l},u{d}]")

    if inplace:
        for t in range(1, n_stages + 1):
            k = stages[t - 1]
            for i in elig:
                if i > k:
                    continue
                q = q_var[(t, i)]
                j = g.deps(i)[0]
                p = p_var[(t, j)]
                cap = [(dre[(t, i, l)], -1)
                       for l, v in enumerate(catalog.fwd(i)) if v.inplace_capable]
                add([(q, 1)] + cap, "<=", 0, f"inplace-variant[t{t},n{i}]")
                add([(q, 1), (r_var[(t, bit_of_id[i])], -1)], "<=", 0,
                    f"inplace-needs-recompute[t{t},n{i}]")
                add([(s_var[(t - 1, bit_of_id[i])], 1), (q, 2)], "<=", 2,
                    f"inplace-fresh-output[t{t},n{i}]")
                add([(r_var[(t, bit_of_id[j])], 1), (p, -1), (q, -2)], "<=", 0,
                    f"inplace-release-lower[t{t},n{i},d{j}]")
                add([(p, 1), (q, 2)], "<=", 2, f"inplace-release-upper[t{t},n{i},d{j}]")
            for j in sorted({g.deps(i)[0] for i in elig if i <= k}):
                add([(p_var[(t, j)], 1), (r_var[(t, bit_of_id[j])], -1)], "<=", 0,
                    f"inplace-release-cap[t{t},d{j}]")

    for (t, l, b), a in alpha.items():
        db = m.bwd_groups[t - 1][l][0]
        s = s_var[(t, b)]
        uid = storables[b].id
        add([(db, 1), (s, 1), (a, -1)], "<=", 1, f"linearization-lb[t{t},l{l},u{uid}]")
        add([(a, 1), (db, -1)], "<=", 0, f"linearization-impl[t{t},l{l},u{uid}]")
        add([(a, 1), (s, -1)], "<=", 0, f"linearization-store[t{t},l{l},u{uid}]")

    # -- memory rows ---------------------------------------------------------
    for i in range(1, g.n + 1):
        local = sets.local_fwd[i]
        terms = [(v, catalog.fwd(i)[l].workspace_bytes)
                 for l, (v, _) in enumerate(m.fwd_groups[i - 1])
                 if catalog.fwd(i)[l].workspace_bytes]
        for b, u in enumerate(storables):
            if u.is_intermediate:
                if u.pos <= i:
                    terms.append((s_var[(0, b)], u.nbytes))
            elif u.pos < i and u.id not in local:
                terms.append((s_var[(0, b)], u.nbytes))
        const = (g.output_bytes(i) + g.params_bytes
                 + sum(g.output_bytes(j) for j in local))
        add(terms, "<=", budget - const, f"forward-mem[n{i}]")

    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        grad = sets.grad_live_bytes[k]
        for l, v in enumerate(catalog.bwd(k)):
            dm = d_mask[(t, l)]
            dep_bytes = sum(sizes[b] for b in range(n_bits) if (dm >> b) & 1)
            terms = [(m.bwd_groups[t - 1][l][0], v.workspace_bytes + dep_bytes)]
            for b in range(n_bits):
                if not (dm >> b) & 1:
                    terms.append((alpha[(t, l, b)], sizes[b]))
            add(terms, "<=", budget - g.params_bytes - grad, f"backward-mem[t{t},l{l}]")

    for t in range(1, n_stages + 1):
        k = stages[t - 1]
        grad = sets.grad_live_bytes[k]
        rhs = budget - g.params_bytes - grad
        for i in range(1, k + 1):
            lb_ids = sets.local_bound[(i, k)]
            lb_bytes = sum(g.output_bytes(j) for j in lb_ids)
            strict_bits = [b for b, u in enumerate(storables)
                           if (u.pos <= i if u.is_intermediate else u.pos < i)]
            incl_bits = strict_bits + [bit_of_id[i]]
            tail_bits = [b for b, u in enumerate(storables) if u.pos > i]

            terms = [(dre[(t, i, l)], v.workspace_bytes)
                     for l, v in enumerate(catalog.fwd(i)) if v.workspace_bytes]
            terms.append((r_var[(t, bit_of_id[i])], g.output_bytes(i) + lb_bytes))
            for l in range(len(catalog.bwd(k))):
                dm = d_mask[(t, l)]
                coef = sum(sizes[b] for b in strict_bits
                           if (dm >> b) & 1 and storables[b].id not in lb_ids)
                if coef:
                    terms.append((m.bwd_groups[t - 1][l][0], coef))
                for b in strict_bits:
                    if not (dm >> b) & 1 and storables[b].id not in lb_ids:
                        terms.append((alpha[(t, l, b)], sizes[b]))
            for b in tail_bits:
                terms.append((s_var[(t - 1, b)], sizes[b]))
            add(terms, "<=", rhs, f"recompute-mem[t{t},n{i}]")

            terms = []
            for l in range(len(catalog.bwd(k))):
                dm = d_mask[(t, l)]
                coef = sum(sizes[b] for b in incl_bits if (dm >> b) & 1)
                if coef:
                    terms.append((m.bwd_groups[t - 1][l][0], coef))
                for b in incl_bits:
                    if not (dm >> b) & 1:
                        terms.append((alpha[(t, l, b)], sizes[b]))
            for b in tail_bits:
                terms.append((s_var[(t - 1, b)], sizes[b]))
            add(terms, "<=", rhs, f"settled-mem[t{t},n{i}]")

    return m


def assignment_from_schedule(model: Model, schedule) -> list[int]:
    """Translate a schedule into the model's 0-1 assignment vector.

    The schedule is taken at face value; run the result through
    evaluate_assignment to learn whether the model accepts it. Raises
    ValueError when the schedule references a variable the model does
    not have (an in-place step with in-place disabled, a recompute of a
    node output without an implementation choice).
    """
    g = model.g
    catalog = model.catalog
    var = model.var_index
    vals = [0] * model.n_vars

    def fwd_index(i: int, name: str) -> int:
        for l, v in enumerate(catalog.fwd(i)):
            if v.name == name:
                return l
        raise ValueError(f"node {i} has no forward implementation {name!r}")

    for i, name in enumerate(schedule.forward_impls, start=1):
        vals[var[VarId("DeltaFwd", node=i, variant=fwd_index(i, name))]] = 1
    for uid in schedule.forward_store:
        vals[var[VarId("S", row=0, node=uid)]] = 1
    is_int = {u.id: u.is_intermediate for u in g.storables}
    for t, plan in enumerate(schedule.stages, start=1):
        for uid in plan.store:
            vals[var[VarId("S", row=t, node=uid)]] = 1
        for uid, impl in plan.recompute:
            vals[var[VarId("R", row=t, node=uid)]] = 1
            if not is_int[uid]:
                if impl is None:
                    raise ValueError(
                        f"recompute of node {uid} at stage {t} carries no "
                        f"implementation choice")
                vals[var[VarId("DeltaRe", row=t, node=uid,
                               variant=fwd_index(uid, impl))]] = 1
        k = plan.node
        bl = [l for l, v in enumerate(catalog.bwd(k))
              if v.name == plan.backward_impl]
        if len(bl) != 1:
            raise ValueError(
                f"stage {t} has no backward implementation {plan.backward_impl!r}")
        vals[var[VarId("DeltaBwd", row=t, variant=bl[0])]] = 1
        overwritten = set()
        for i in plan.inplace:
            key = VarId("Q", row=t, node=i)
            if key not in var:
                raise ValueError(
                    f"schedule runs node {i} in place at stage {t} but the "
                    f"model has no such variable")
            vals[var[key]] = 1
            overwritten.add(g.deps(i)[0])
        for vid, idx in var.items():
            if vid.kind == "P" and vid.row == t and vid.node not in overwritten:
                vals[idx] = vals[var[VarId("R", row=t, node=vid.node)]]
    for vid, idx in var.items():
        if vid.kind == "Alpha":
            vals[idx] = (vals[var[VarId("DeltaBwd", row=vid.row, variant=vid.variant)]]
                         & vals[var[VarId("S", row=vid.row, node=vid.node)]])
    return vals


def evaluate_assignment(model: Model, assignment) -> dict:
    """Check a full 0-1 assignment against every row and fixing.

    Returns {"feasible": bool, "violations": [tags], "objective": Fraction}.
    This is the reference route the solver and the oracle are compared
    against; it never consults the closed-form memory evaluators.
    """
    if len(assignment) != model.n_vars:
        raise ValueError(f"assignment has {len(assignment)} values, "
                         f"model has {model.n_vars} variables")
    violations: list[str] = []
    for idx, val in enumerate(assignment):
        if val not in (0, 1):
            violations.append(f"not-binary[{model.var_ids[idx].name()}]")
    for idx, val in model.fixed.items():
        if assignment[idx] != val:
            violations.append(f"fixed-var[{model.var_ids[idx].name()}]")
    for row in model.rows:
        activity = sum(c * assignment[v] for v, c in row.terms)
        ok = activity == row.rhs if row.sense == "=" else activity <= row.rhs
        if not ok:
            violations.append(row.tag)
    objective = sum((c * assignment[v] for v, c in model.objective), Fraction(0))
    return {"feasible": not violations, "violations": violations, "objective": objective}


def _coef_str(c: Fraction | int) -> str:
    """Exact decimal rendering for LP text; fails on non-decimal rationals."""
    f = Fraction(c)
    den = f.denominator
    two = five = 0
    while den % 2 == 0:
        den //= 2
        two += 1
    while den % 5 == 0:
        den //= 5
        five += 1
    if den != 1:
        raise FormatError(
            f"coefficient {f} has no exact decimal form for the LP export")
    shift = max(two, five)
    scaled = f.numerator * 10 ** shift // f.denominator
    if shift == 0:
        return str(scaled)
    text = str(abs(scaled)).rjust(shift + 1, "0")
    sign = "-" if scaled < 0 else ""
    return f"{sign}{text[:-shift]}.{text[-shift:]}"


def _lp_expr(parts: list[tuple[Fraction | int, str]]) -> list[str]:
    """Render coefficient/name pairs as wrapped LP expression lines."""
    pieces: list[str] = []
    for idx, (coef, name) in enumerate(parts):
        mag = abs(Fraction(coef))
        sign = "-" if coef < 0 else ("+" if idx else "")
        body = name if mag == 1 else f"{_coef_str(mag)} {name}"
        pieces.append(f"{sign} {body}".strip() if sign else body)
    lines: list[str] = []
    cur = ""
    for piece in pieces:
        if cur and len(cur) + len(piece) + 1 > 200:
            lines.append(cur)
            cur = piece
        else:
            cur = f"{cur} {piece}" if cur else piece
    if cur:
        lines.append(cur)
    return lines


def _slug(tag: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in tag).strip("_")


def export_lp(model: Model, sink) -> None:
    """Write the model in LP text form (deterministic bytes).

    *sink* is a file path or a text file object. Variables keep their
    canonical names; fixings land in the Bounds section.
    """
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    fh = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    try:
        names = [vid.name() for vid in model.var_ids]
        fh.write("\\ joint rematerialization and implementation schedule\n")
        fh.write(f"\\ budget {model.budget} bytes, {model.n_vars} binaries, "
                 f"{len(model.rows)} rows\n")
        fh.write("Minimize\n")
        obj_parts = [(coef, names[v]) for v, coef in model.objective]
        for idx, line in enumerate(_lp_expr(obj_parts) or ["0 " + names[0]]):
            fh.write((" obj: " if idx == 0 else "      ") + line + "\n")
        fh.write("Subject To\n")
        for ridx, row in enumerate(model.rows):
            parts = [(c, names[v]) for v, c in row.terms]
            if not parts:
                parts = [(0, names[0])]
            sense = "=" if row.sense == "=" else "<="
            label = f" c{ridx}_{_slug(row.tag)}: "
            lines = _lp_expr(parts)
            lines[-1] += f" {sense} {row.rhs}"
            for idx, line in enumerate(lines):
                fh.write((label if idx == 0 else " " * len(label)) + line + "\n")
        fh.write("Bounds\n")
        for idx in sorted(model.fixed):
            fh.write(f" {names[idx]} = {model.fixed[idx]}\n")
        fh.write("Binary\n")
        for name in names:
            fh.write(f" {name}\n")
        fh.write("End\n")
    finally:
        if own:
            fh.close()


def export_lp_string(model: Model) -> str:
    buf = io.StringIO()
    export_lp(model, buf)
    return buf.getvalue()
