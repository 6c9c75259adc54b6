"""Profiled computation graph: loading, validation, derived dependency sets.

A graph is a DAG of forward nodes numbered 1..N where every edge (j, i)
has j < i, so node order is execution order. Node N is the unique sink.
A subset of nodes carries backward operators; the backward pass walks
them in descending node order, one stage per node. Nodes may also pin
named intermediate tensors (saved workspace from the forward op) that
schedules can store or recompute alongside the node's own output.

Everything downstream (memory accounting, the integer program, the
simulator, the oracle) consumes the derived sets computed here, so this
module is deliberately dependency-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
import json

from .units import FormatError, parse_bytes, require

GRAPH_FORMAT = 1

DEPS_KINDS = ("input", "output", "intermediate")


@dataclass(frozen=True)
class ForwardNode:
    id: int
    output_bytes: int
    deps: tuple[int, ...]  # sorted, all < id


@dataclass(frozen=True)
class Intermediate:
    id: int
    nbytes: int
    creator: int  # forward node whose execution materializes this tensor


@dataclass(frozen=True)
class BackwardImplSpec:
    """Structural declaration of one backward implementation.

    deps_kind names the activation family the implementation reads
    ("input": the forward op's inputs, "output": the forward output,
    "intermediate": the node's saved intermediates); extra_deps adds
    specific tensor ids on top. The catalog may override the resolved
    set per variant; this declaration is the default.
    """

    name: str
    deps_kind: str
    extra_deps: tuple[int, ...] = ()


@dataclass(frozen=True)
class BackwardOp:
    node: int
    grad_bytes: int
    impls: tuple[BackwardImplSpec, ...]


@dataclass(frozen=True)
class Storable:
    """A tensor a schedule can store across stages: a forward output or an intermediate."""

    id: int
    nbytes: int
    pos: int  # forward step at which the tensor first exists
    is_intermediate: bool
    creator: int  # == id for forward outputs


@dataclass(frozen=True)
class Graph:
    nodes: tuple[ForwardNode, ...]
    params_bytes: int
    backward: tuple[BackwardOp, ...]
    intermediates: tuple[Intermediate, ...]

    @property
    def n(self) -> int:
        return len(self.nodes)

    def node(self, i: int) -> ForwardNode:
        return self.nodes[i - 1]

    def deps(self, i: int) -> tuple[int, ...]:
        return self.nodes[i - 1].deps

    def output_bytes(self, i: int) -> int:
        return self.nodes[i - 1].output_bytes

    @cached_property
    def backward_by_node(self) -> dict[int, BackwardOp]:
        return {b.node: b for b in self.backward}

    @cached_property
    def bwd_nodes(self) -> tuple[int, ...]:
        """Nodes with a backward operator, ascending."""
        return tuple(b.node for b in self.backward)

    @cached_property
    def stage_nodes(self) -> tuple[int, ...]:
        """Backward execution order: one stage per backward node, descending."""
        return tuple(sorted(self.bwd_nodes, reverse=True))

    @cached_property
    def consumers(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {i: [] for i in range(1, self.n + 1)}
        for node in self.nodes:
            for j in node.deps:
                out[j].append(node.id)
        return {i: tuple(v) for i, v in out.items()}

    @cached_property
    def last_fwd_use(self) -> dict[int, int]:
        """Last forward step that reads node i's output (i itself if unused)."""
        return {i: max(self.consumers[i], default=i) for i in range(1, self.n + 1)}

    @cached_property
    def intermediates_of(self) -> dict[int, tuple[Intermediate, ...]]:
        out: dict[int, list[Intermediate]] = {i: [] for i in range(1, self.n + 1)}
        for u in self.intermediates:
            out[u.creator].append(u)
        return {i: tuple(sorted(v, key=lambda u: u.id)) for i, v in out.items()}

    @cached_property
    def storables(self) -> tuple[Storable, ...]:
        """All storable tensors in position order: each node, then its intermediates."""
        out: list[Storable] = []
        for node in self.nodes:
            out.append(Storable(node.id, node.output_bytes, node.id, False, node.id))
            for u in self.intermediates_of[node.id]:
                out.append(Storable(u.id, u.nbytes, node.id, True, node.id))
        return tuple(out)

    @cached_property
    def storable_by_id(self) -> dict[int, Storable]:
        return {u.id: u for u in self.storables}

    def grad_bytes(self, k: int) -> int:
        return self.backward_by_node[k].grad_bytes

    def default_bwd_deps(self, k: int, spec: BackwardImplSpec) -> tuple[int, ...]:
        """Resolve a structural impl declaration to a concrete dependency set."""
        if spec.deps_kind == "input":
            base = set(self.deps(k))
        elif spec.deps_kind == "output":
            base = {k}
        else:
            base = {u.id for u in self.intermediates_of[k]}
        base.update(spec.extra_deps)
        return tuple(sorted(base))


@dataclass(frozen=True)
class DependencySets:
    """Static liveness sets derived from a graph.

    local_fwd[i] is the set of forward outputs j < i that some step at or
    after i still reads; holding them is the floor for any state in which
    step i runs. local_bound[(i, k)] is the variant used inside backward
    stage k: with bound_kind "upper" it equals local_fwd[i] (safe for any
    stage), with "tight" it only counts reads between i and k. Parameter
    bytes are accounted separately and are not members of these sets.

    grad_live_excl[k] lists nodes t whose gradient tensor is live during
    stage k, excluding y_k itself; grad_live_bytes[k] is the byte total
    including y_k. grad_produced_at[t] is the stage node whose backward
    step materializes y_t.
    """

    bound_kind: str
    fwd_deps: dict[int, tuple[int, ...]]
    local_fwd: dict[int, frozenset[int]]
    local_bound: dict[tuple[int, int], frozenset[int]]
    grad_live_excl: dict[int, frozenset[int]]
    grad_live_bytes: dict[int, int]
    grad_produced_at: dict[int, int]

    def local_bytes(self, g: Graph, i: int) -> int:
        return sum(g.output_bytes(j) for j in self.local_fwd[i])

    def local_bound_bytes(self, g: Graph, i: int, k: int) -> int:
        return sum(g.output_bytes(j) for j in self.local_bound[(i, k)])


def compute_dependency_sets(g: Graph, bound_kind: str = "upper") -> DependencySets:
    if bound_kind not in ("upper", "tight"):
        raise ValueError(f"bound_kind must be 'upper' or 'tight', got {bound_kind!r}")

    fwd_deps = {i: g.deps(i) for i in range(1, g.n + 1)}

    # local_fwd by suffix accumulation: future[i] = union of deps(t) for t >= i.
    local_fwd: dict[int, frozenset[int]] = {}
    future: set[int] = set()
    for i in range(g.n, 0, -1):
        future.update(g.deps(i))
        local_fwd[i] = frozenset(j for j in future if j < i)

    local_bound: dict[tuple[int, int], frozenset[int]] = {}
    for k in g.bwd_nodes:
        if bound_kind == "upper":
            for i in range(1, k + 1):
                local_bound[(i, k)] = local_fwd[i]
        else:
            window: set[int] = set()
            bounds: dict[int, frozenset[int]] = {}
            for i in range(k, 0, -1):
                window.update(g.deps(i))
                bounds[i] = frozenset(j for j in window if j < i)
            for i in range(1, k + 1):
                local_bound[(i, k)] = bounds[i]

    bwd = set(g.bwd_nodes)
    grad_produced_at: dict[int, int] = {}
    for t in g.bwd_nodes:
        later = [c for c in g.consumers[t] if c in bwd]
        grad_produced_at[t] = max(later) if later else t

    grad_live_excl: dict[int, frozenset[int]] = {}
    grad_live_bytes: dict[int, int] = {}
    for k in g.bwd_nodes:
        live = frozenset(
            t for t in g.bwd_nodes if t < k <= grad_produced_at[t]
        )
        grad_live_excl[k] = live
        grad_live_bytes[k] = g.grad_bytes(k) + sum(g.grad_bytes(t) for t in live)

    return DependencySets(
        bound_kind=bound_kind,
        fwd_deps=fwd_deps,
        local_fwd=local_fwd,
        local_bound=local_bound,
        grad_live_excl=grad_live_excl,
        grad_live_bytes=grad_live_bytes,
        grad_produced_at=grad_produced_at,
    )


def _require_int_id(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(f"{what} must be an integer, got {value!r}")
    return value


def load_graph(document) -> Graph:
    """Build and validate a Graph from a parsed JSON mapping (or a file path)."""
    if isinstance(document, (str, Path)):
        with open(document, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    require(isinstance(document, dict), "graph document must be a JSON object")
    require(document.get("format") == GRAPH_FORMAT,
            f"unsupported graph format {document.get('format')!r}, expected {GRAPH_FORMAT}")

    raw_nodes = document.get("nodes")
    require(isinstance(raw_nodes, list) and raw_nodes, "graph needs a nonempty 'nodes' list")

    nodes: list[ForwardNode] = []
    for idx, raw in enumerate(raw_nodes):
        require(isinstance(raw, dict), f"nodes[{idx}] must be an object")
        nid = _require_int_id(raw.get("id"), f"nodes[{idx}].id")
        require(nid == idx + 1,
                f"node ids must be contiguous 1..N in order; expected {idx + 1}, got {nid}")
        out_bytes = parse_bytes(raw.get("output_bytes"))
        raw_deps = raw.get("deps", [])
        require(isinstance(raw_deps, list), f"node {nid}: deps must be a list")
        deps = []
        for d in raw_deps:
            d = _require_int_id(d, f"node {nid}: dep")
            require(1 <= d < nid, f"node {nid}: dep {d} must name an earlier node")
            deps.append(d)
        require(len(set(deps)) == len(deps), f"node {nid}: duplicate deps")
        nodes.append(ForwardNode(nid, out_bytes, tuple(sorted(deps))))

    params_bytes = parse_bytes(document.get("params_bytes", 0))

    node_ids = {node.id for node in nodes}
    used = {d for node in nodes for d in node.deps}
    sinks = sorted(node_ids - used)
    require(sinks == [len(nodes)],
            f"graph must have node {len(nodes)} as its unique sink, found sinks {sinks}")

    raw_ints = document.get("intermediates", [])
    require(isinstance(raw_ints, list), "'intermediates' must be a list")
    intermediates: list[Intermediate] = []
    seen_int_ids: set[int] = set()
    for idx, raw in enumerate(raw_ints):
        require(isinstance(raw, dict), f"intermediates[{idx}] must be an object")
        iid = _require_int_id(raw.get("id"), f"intermediates[{idx}].id")
        require(iid not in node_ids, f"intermediate id {iid} collides with a node id")
        require(iid not in seen_int_ids, f"duplicate intermediate id {iid}")
        seen_int_ids.add(iid)
        nbytes = parse_bytes(raw.get("bytes"))
        creator = _require_int_id(raw.get("creator"), f"intermediate {iid}: creator")
        require(creator in node_ids, f"intermediate {iid}: unknown creator {creator}")
        intermediates.append(Intermediate(iid, nbytes, creator))

    all_tensor_ids = node_ids | seen_int_ids
    int_creator = {u.id: u.creator for u in intermediates}

    raw_bwd = document.get("backward", [])
    require(isinstance(raw_bwd, list), "'backward' must be a list")
    backward: list[BackwardOp] = []
    prev = 0
    for idx, raw in enumerate(raw_bwd):
        require(isinstance(raw, dict), f"backward[{idx}] must be an object")
        k = _require_int_id(raw.get("node"), f"backward[{idx}].node")
        require(k in node_ids, f"backward entry names unknown node {k}")
        require(k > prev, "backward entries must be in ascending node order without duplicates")
        prev = k
        grad_bytes = parse_bytes(raw.get("grad_bytes"))
        raw_impls = raw.get("impls")
        require(isinstance(raw_impls, list) and raw_impls,
                f"backward of node {k} needs a nonempty 'impls' list")
        impls: list[BackwardImplSpec] = []
        names: set[str] = set()
        has_ints = any(u.creator == k for u in intermediates)
        for jdx, raw_impl in enumerate(raw_impls):
            require(isinstance(raw_impl, dict), f"backward[{idx}].impls[{jdx}] must be an object")
            name = raw_impl.get("name")
            require(isinstance(name, str) and name, f"backward of node {k}: impl needs a name")
            require(name not in names, f"backward of node {k}: duplicate impl name {name!r}")
            names.add(name)
            kind = raw_impl.get("deps_kind")
            require(kind in DEPS_KINDS,
                    f"backward of node {k}: deps_kind must be one of {DEPS_KINDS}, got {kind!r}")
            require(kind != "intermediate" or has_ints,
                    f"backward of node {k}: deps_kind 'intermediate' but node has no intermediates")
            raw_extra = raw_impl.get("extra_deps", [])
            require(isinstance(raw_extra, list), f"backward of node {k}: extra_deps must be a list")
            extra = []
            for d in raw_extra:
                d = _require_int_id(d, f"backward of node {k}: extra dep")
                require(d in all_tensor_ids, f"backward of node {k}: unknown extra dep {d}")
                pos = int_creator.get(d, d)
                require(pos <= k,
                        f"backward of node {k}: dep {d} is created after the forward step of {k}")
                extra.append(d)
            require(len(set(extra)) == len(extra), f"backward of node {k}: duplicate extra deps")
            impls.append(BackwardImplSpec(name, kind, tuple(sorted(extra))))
        backward.append(BackwardOp(k, grad_bytes, tuple(impls)))

    g = Graph(tuple(nodes), params_bytes, tuple(backward), tuple(intermediates))

    # Every non-sink backward node's gradient must be produced by some later
    # backward stage, or its own stage could never run.
    bwd = set(g.bwd_nodes)
    for t in g.bwd_nodes:
        if t == g.n:
            continue
        if not any(c in bwd for c in g.consumers[t]):
            raise FormatError(
                f"backward of node {t} consumes gradient y_{t}, "
                f"but no later backward stage produces it")
    return g


def graph_to_doc(g: Graph) -> dict:
    """Inverse of load_graph, for generated fixtures."""
    doc = {
        "format": GRAPH_FORMAT,
        "params_bytes": g.params_bytes,
        "nodes": [
            {"id": node.id, "output_bytes": node.output_bytes, "deps": list(node.deps)}
            for node in g.nodes
        ],
        "backward": [
            {
                "node": b.node,
                "grad_bytes": b.grad_bytes,
                "impls": [
                    {
                        "name": impl.name,
                        "deps_kind": impl.deps_kind,
                        "extra_deps": list(impl.extra_deps),
                    }
                    for impl in b.impls
                ],
            }
            for b in g.backward
        ],
        "intermediates": [
            {"id": u.id, "bytes": u.nbytes, "creator": u.creator}
            for u in g.intermediates
        ],
    }
    return doc
