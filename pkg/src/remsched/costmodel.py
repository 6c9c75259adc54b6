"""Operator catalogs: per-node implementation variants with cost and workspace.

Each forward node has a list of forward variants (compute cost, transient
workspace bytes, optional in-place capability) and each backward node a
list of backward variants (cost, workspace, and the set of stored tensors
the implementation reads). The first variant of every list is the
default. Variant lists come from a catalog document; ablation modes
restrict them to measure how much each variant family buys.
"""

from __future__ import annotations

import importlib.resources
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
import json

from .graph import Graph, load_graph
from .units import FormatError, format_cost, parse_bytes, parse_cost, require

CATALOG_FORMAT = 1

ABLATION_MODES = ("none", "conv", "out", "int", "all")

GENERATOR_KINDS = ("chain", "residual", "inception-toy", "unet-toy")


@dataclass(frozen=True)
class ForwardVariant:
    name: str
    workspace_bytes: int
    cost: Fraction
    inplace_capable: bool = False


@dataclass(frozen=True)
class BackwardVariant:
    name: str
    workspace_bytes: int
    cost: Fraction
    deps: tuple[int, ...]  # storable ids (forward outputs or intermediates) this impl reads


@dataclass(frozen=True)
class Catalog:
    forward: dict[int, tuple[ForwardVariant, ...]]
    backward: dict[int, tuple[BackwardVariant, ...]]

    def fwd(self, i: int) -> tuple[ForwardVariant, ...]:
        return self.forward[i]

    def bwd(self, k: int) -> tuple[BackwardVariant, ...]:
        return self.backward[k]

    def fwd_index(self, i: int, name: str) -> int:
        for idx, v in enumerate(self.forward[i]):
            if v.name == name:
                return idx
        raise KeyError(f"node {i} has no forward variant {name!r}")

    def bwd_index(self, k: int, name: str) -> int:
        for idx, v in enumerate(self.backward[k]):
            if v.name == name:
                return idx
        raise KeyError(f"node {k} has no backward variant {name!r}")

    def min_fwd_cost(self, i: int) -> Fraction:
        return min(v.cost for v in self.forward[i])

    def min_bwd_cost(self, k: int) -> Fraction:
        return min(v.cost for v in self.backward[k])


def variant_category(g: Graph, k: int, variant: BackwardVariant) -> str:
    """Classify a backward variant by what it reads: output, intermediate, or input."""
    if k in variant.deps:
        return "output"
    if any(g.storable_by_id[d].is_intermediate for d in variant.deps):
        return "intermediate"
    return "input"


def load_catalog(document, g: Graph) -> Catalog:
    """Build and validate a Catalog against *g* from a parsed mapping (or file path).

    A backward variant may omit "deps", in which case the graph's
    backward impl declaration with the same name supplies the default
    dependency set; an explicit "deps" list is authoritative.
    """
    if isinstance(document, (str, Path)):
        with open(document, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    require(isinstance(document, dict), "catalog document must be a JSON object")
    require(document.get("format") == CATALOG_FORMAT,
            f"unsupported catalog format {document.get('format')!r}, expected {CATALOG_FORMAT}")

    raw_fwd = document.get("forward")
    require(isinstance(raw_fwd, list), "catalog needs a 'forward' list")
    forward: dict[int, tuple[ForwardVariant, ...]] = {}
    for idx, raw in enumerate(raw_fwd):
        require(isinstance(raw, dict), f"forward[{idx}] must be an object")
        i = raw.get("node")
        require(isinstance(i, int) and not isinstance(i, bool) and 1 <= i <= g.n,
                f"forward[{idx}]: unknown node {i!r}")
        require(i not in forward, f"duplicate forward catalog entry for node {i}")
        raw_vars = raw.get("variants")
        require(isinstance(raw_vars, list) and raw_vars,
                f"forward catalog for node {i} needs a nonempty 'variants' list")
        variants: list[ForwardVariant] = []
        names: set[str] = set()
        for raw_var in raw_vars:
            require(isinstance(raw_var, dict), f"node {i}: forward variant must be an object")
            name = raw_var.get("name")
            require(isinstance(name, str) and name, f"node {i}: forward variant needs a name")
            require(name not in names, f"node {i}: duplicate forward variant {name!r}")
            names.add(name)
            ws = parse_bytes(raw_var.get("workspace_bytes", 0))
            cost = parse_cost(raw_var.get("cost"))
            inplace = raw_var.get("inplace_capable", False)
            require(isinstance(inplace, bool), f"node {i}: inplace_capable must be a bool")
            if inplace:
                deps = g.deps(i)
                require(len(deps) == 1,
                        f"node {i}: in-place variant {name!r} needs exactly one input")
                require(g.output_bytes(i) == g.output_bytes(deps[0]),
                        f"node {i}: in-place variant {name!r} needs input and output "
                        f"of equal size")
            variants.append(ForwardVariant(name, ws, cost, inplace))
        forward[i] = tuple(variants)
    missing = sorted(set(range(1, g.n + 1)) - set(forward))
    require(not missing, f"catalog has no forward variants for nodes {missing}")

    raw_bwd = document.get("backward")
    require(isinstance(raw_bwd, list), "catalog needs a 'backward' list")
    backward: dict[int, tuple[BackwardVariant, ...]] = {}
    for idx, raw in enumerate(raw_bwd):
        require(isinstance(raw, dict), f"backward[{idx}] must be an object")
        k = raw.get("node")
        require(isinstance(k, int) and not isinstance(k, bool) and k in g.backward_by_node,
                f"backward[{idx}]: node {k!r} has no backward operator in the graph")
        require(k not in backward, f"duplicate backward catalog entry for node {k}")
        raw_vars = raw.get("variants")
        require(isinstance(raw_vars, list) and raw_vars,
                f"backward catalog for node {k} needs a nonempty 'variants' list")
        variants: list[BackwardVariant] = []
        names = set()
        for raw_var in raw_vars:
            require(isinstance(raw_var, dict), f"node {k}: backward variant must be an object")
            name = raw_var.get("name")
            require(isinstance(name, str) and name, f"node {k}: backward variant needs a name")
            require(name not in names, f"node {k}: duplicate backward variant {name!r}")
            names.add(name)
            ws = parse_bytes(raw_var.get("workspace_bytes", 0))
            cost = parse_cost(raw_var.get("cost"))
            if "deps" in raw_var:
                raw_deps = raw_var["deps"]
                require(isinstance(raw_deps, list), f"node {k}: variant deps must be a list")
                deps = []
                for d in raw_deps:
                    require(isinstance(d, int) and not isinstance(d, bool),
                            f"node {k}: variant dep must be an integer, got {d!r}")
                    u = g.storable_by_id.get(d)
                    require(u is not None, f"node {k}: variant {name!r} reads unknown tensor {d}")
                    require(u.pos <= k,
                            f"node {k}: variant {name!r} reads tensor {d} created after step {k}")
                    deps.append(d)
                require(len(set(deps)) == len(deps), f"node {k}: variant {name!r} duplicate deps")
            else:
                spec = next((s for s in g.backward_by_node[k].impls if s.name == name), None)
                require(spec is not None,
                        f"node {k}: variant {name!r} has no 'deps' and no matching "
                        f"graph impl to take defaults from")
                deps = list(g.default_bwd_deps(k, spec))
            variants.append(BackwardVariant(name, ws, cost, tuple(sorted(deps))))
        backward[k] = tuple(variants)
    missing = sorted(set(g.bwd_nodes) - set(backward))
    require(not missing, f"catalog has no backward variants for nodes {missing}")

    return Catalog(forward, backward)


def catalog_to_doc(catalog: Catalog) -> dict:
    return {
        "format": CATALOG_FORMAT,
        "forward": [
            {
                "node": i,
                "variants": [
                    {
                        "name": v.name,
                        "workspace_bytes": v.workspace_bytes,
                        "cost": format_cost(v.cost),
                        **({"inplace_capable": True} if v.inplace_capable else {}),
                    }
                    for v in variants
                ],
            }
            for i, variants in sorted(catalog.forward.items())
        ],
        "backward": [
            {
                "node": k,
                "variants": [
                    {
                        "name": v.name,
                        "workspace_bytes": v.workspace_bytes,
                        "cost": format_cost(v.cost),
                        "deps": list(v.deps),
                    }
                    for v in variants
                ],
            }
            for k, variants in sorted(catalog.backward.items())
        ],
    }


def apply_ablation(catalog: Catalog, g: Graph, mode: str) -> Catalog:
    """Restrict a catalog to one ablation mode.

    none: default variants only, both sides. conv: all forward variants,
    backward variants that read exactly what the default reads (pure
    algorithm choice). out / int: all forward variants, default backward
    plus output-activated / intermediate-activated variants. all: the
    full catalog. The default (first) variant always survives, so every
    mode yields a complete catalog.
    """
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}, expected one of {ABLATION_MODES}")
    if mode == "all":
        return catalog
    forward = {
        i: (variants[:1] if mode == "none" else variants)
        for i, variants in catalog.forward.items()
    }
    backward: dict[int, tuple[BackwardVariant, ...]] = {}
    for k, variants in catalog.backward.items():
        default = variants[0]
        if mode == "none":
            kept = (default,)
        elif mode == "conv":
            kept = tuple(v for v in variants if v.deps == default.deps)
        else:
            wanted = "output" if mode == "out" else "intermediate"
            kept = tuple(
                v for v in variants
                if v is default or variant_category(g, k, v) == wanted
            )
        backward[k] = kept
    return Catalog(forward, backward)


def _chain_deps(n: int) -> list[list[int]]:
    return [[] if i == 1 else [i - 1] for i in range(1, n + 1)]


def _residual_deps(n: int) -> list[list[int]]:
    """Chain plus a skip edge into every second node from 5 on."""
    deps = _chain_deps(n)
    for i in range(5, n + 1, 2):
        deps[i - 1].append(i - 3)
    return deps


def _inception_deps(n: int) -> list[list[int]]:
    """Stem, then blocks of two parallel branches joined by a merge node."""
    deps: list[list[int]] = [[]]
    anchor = 1
    i = 2
    while i <= n:
        block = min(3, n - i + 1)
        if block < 3:
            for _ in range(block):
                deps.append([i - 1] if i - 1 >= anchor else [anchor])
                i += 1
            break
        deps.append([anchor])      # branch a
        deps.append([anchor])      # branch b
        deps.append([i, i + 1])    # merge
        anchor = i + 2
        i += 3
    return deps


def _unet_deps(n: int) -> list[list[int]]:
    """A down chain and an up chain with skip links to mirrored down nodes."""
    deps = _chain_deps(n)
    half = n // 2
    for i in range(half + 2, n + 1):
        mirror = 2 * half + 2 - i
        if 1 <= mirror < i and mirror not in deps[i - 1]:
            deps[i - 1].append(mirror)
    return deps


def generate_synthetic(kind: str, n: int, seed: int, *,
                       fwd_variants: int = 1,
                       bwd_variants: int = 1,
                       intermediate_every: int = 0,
                       inplace_marks: bool = False) -> tuple[Graph, Catalog]:
    """Generate a synthetic profiled graph and catalog.

    "chain" is the unit instance (all sizes, costs, gradients 1; no
    parameters); the other kinds draw sizes and costs from a seeded RNG.
    Options widen the instance: extra forward/backward variants per node,
    an intermediate tensor every *intermediate_every* nodes, and in-place
    capability flags on eligible nodes.
    """
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}, expected one of {GENERATOR_KINDS}")
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if fwd_variants < 1 or bwd_variants < 1:
        raise ValueError("variant counts must be at least 1")

    rng = random.Random(seed)
    deps = {
        "chain": _chain_deps,
        "residual": _residual_deps,
        "inception-toy": _inception_deps,
        "unet-toy": _unet_deps,
    }[kind](n)

    unit = kind == "chain"
    sizes = [1 if unit else rng.randint(1, 4) for _ in range(n)]
    params_bytes = 0 if unit else rng.randint(2, 8)
    base_costs = [Fraction(1) if unit else Fraction(rng.randint(1, 9)) for _ in range(n)]

    intermediates = []
    next_int_id = n + 1
    if intermediate_every:
        for i in range(intermediate_every, n + 1, intermediate_every):
            intermediates.append({
                "id": next_int_id,
                "bytes": 1 if unit else max(1, sizes[i - 1] // 2),
                "creator": i,
            })
            next_int_id += 1
    ints_of = {}
    for u in intermediates:
        ints_of.setdefault(u["creator"], []).append(u["id"])

    nodes = [{"id": i, "output_bytes": sizes[i - 1], "deps": deps[i - 1]}
             for i in range(1, n + 1)]

    backward = []
    for k in range(1, n + 1):
        impls = [{"name": "grad-input", "deps_kind": "input", "extra_deps": []}]
        if bwd_variants >= 2:
            impls.append({"name": "grad-output", "deps_kind": "output", "extra_deps": []})
        if bwd_variants >= 3 and k in ints_of:
            impls.append({"name": "grad-saved", "deps_kind": "intermediate", "extra_deps": []})
        backward.append({
            "node": k,
            "grad_bytes": sizes[k - 1],
            "impls": impls,
        })

    graph_doc = {
        "format": 1,
        "nodes": nodes,
        "params_bytes": params_bytes,
        "backward": backward,
        "intermediates": intermediates,
    }
    g = load_graph(graph_doc)

    fwd_cat = []
    for i in range(1, n + 1):
        base = base_costs[i - 1]
        eligible = (inplace_marks and len(g.deps(i)) == 1
                    and sizes[i - 1] == sizes[g.deps(i)[0] - 1])
        variants = [{"name": "ref", "workspace_bytes": 0, "cost": format_cost(base),
                     **({"inplace_capable": True} if eligible else {})}]
        if fwd_variants >= 2:
            variants.append({
                "name": "fast",
                "workspace_bytes": sizes[i - 1] + (0 if unit else rng.randint(0, 2)),
                "cost": format_cost(base + Fraction(1, 2) if unit
                                    else max(Fraction(1, 2), base - Fraction(1, 2))),
            })
        for extra in range(3, fwd_variants + 1):
            variants.append({
                "name": f"alt{extra}",
                "workspace_bytes": extra * sizes[i - 1],
                "cost": format_cost(base + Fraction(extra, 4)),
            })
        fwd_cat.append({"node": i, "variants": variants})

    bwd_cat = []
    for entry in backward:
        k = entry["node"]
        base = base_costs[k - 1] + (Fraction(1) if unit else Fraction(rng.randint(1, 3)))
        variants = [{"name": "grad-input", "workspace_bytes": 0,
                     "cost": format_cost(base), "deps": sorted(g.deps(k))}]
        if bwd_variants >= 2:
            variants.append({"name": "grad-output", "workspace_bytes": 0,
                             "cost": format_cost(base + (Fraction(1, 2) if unit else 1)),
                             "deps": [k]})
        if bwd_variants >= 3 and k in ints_of:
            variants.append({"name": "grad-saved",
                             "workspace_bytes": 1,
                             "cost": format_cost(max(Fraction(1, 2), base - 1)),
                             "deps": sorted(ints_of[k])})
        bwd_cat.append({"node": k, "variants": variants})

    catalog_doc = {"format": 1, "forward": fwd_cat, "backward": bwd_cat}
    return g, load_catalog(catalog_doc, g)


def bundled_fixture(name: str = "resnet_toy") -> tuple[Graph, Catalog]:
    """Load a graph/catalog pair shipped with the package.

    *name* picks ``data/<name>.json`` (graph) and
    ``data/<name>.catalog.json`` (catalog).
    """
    root = importlib.resources.files("remsched").joinpath("data")
    gdoc = json.loads(root.joinpath(f"{name}.json").read_text(encoding="utf-8"))
    g = load_graph(gdoc)
    cdoc = json.loads(root.joinpath(f"{name}.catalog.json").read_text(encoding="utf-8"))
    return g, load_catalog(cdoc, g)


def resnet_toy() -> tuple[Graph, Catalog]:
    """The bundled 20-node residual fixture with a convnet-shaped catalog.

    Five "conv" nodes carry seven forward variants whose cost is not
    monotone in workspace; "relu" nodes are in-place capable with
    output-activated backwards, and most also save a sign bitmask that
    an intermediate-activated backward can use instead; the odd nodes
    from 5 on join the residual skips. Sizes are small integers (think
    scaled units, not real tensors). Built deterministically so the
    bundled data files can be regenerated byte-for-byte.
    """
    n = 20
    deps = _residual_deps(n)
    sizes = [128] * 4 + [64] * 8 + [32] * 8

    conv_nodes = {2, 6, 10, 14, 18}
    relu_nodes = {4, 8, 12, 16, 20}
    saved_relu = {4, 8, 12, 16}

    # sign bitmasks saved by the relu forwards, an eighth of the activation
    intermediates = [
        {"id": 100 + c, "bytes": max(2, sizes[c - 1] // 8), "creator": c}
        for c in sorted(saved_relu)
    ]

    nodes = [{"id": i, "output_bytes": sizes[i - 1], "deps": deps[i - 1]}
             for i in range(1, n + 1)]

    backward = []
    for k in range(1, n + 1):
        impls = [{"name": "bwd-ref", "deps_kind": "input", "extra_deps": []}]
        if k in conv_nodes or k in relu_nodes:
            impls.append({"name": "bwd-out", "deps_kind": "output", "extra_deps": []})
        if k in saved_relu:
            impls.append({"name": "bwd-saved", "deps_kind": "intermediate", "extra_deps": []})
        # half-width gradients so activations dominate the floor, the way
        # large-batch training behaves
        backward.append({"node": k, "grad_bytes": sizes[k - 1] // 2, "impls": impls})

    graph_doc = {
        "format": 1,
        "nodes": nodes,
        "params_bytes": 60,
        "backward": backward,
        "intermediates": intermediates,
    }
    g = load_graph(graph_doc)

    conv_curve = [(0, 39), (8, 7), (16, 5), (24, 18), (32, 8), (48, 6), (64, 5)]

    fwd_cat = []
    for i in range(1, n + 1):
        if i in conv_nodes:
            variants = [
                {"name": f"conv-a{idx}", "workspace_bytes": ws, "cost": c}
                for idx, (ws, c) in enumerate(conv_curve)
            ]
        elif i in relu_nodes:
            variants = [
                {"name": "relu", "workspace_bytes": 0, "cost": 2, "inplace_capable": True},
            ]
        else:
            variants = [
                {"name": "ref", "workspace_bytes": 0, "cost": 3},
                {"name": "fused", "workspace_bytes": sizes[i - 1] // 2, "cost": 2},
            ]
        fwd_cat.append({"node": i, "variants": variants})

    bwd_cat = []
    for k in range(1, n + 1):
        if k in conv_nodes:
            variants = [
                {"name": "bwd-ref", "workspace_bytes": 0, "cost": 20, "deps": sorted(g.deps(k))},
                {"name": "bwd-fast", "workspace_bytes": 64, "cost": 12, "deps": sorted(g.deps(k))},
                {"name": "bwd-out", "workspace_bytes": 32, "cost": 13, "deps": [k]},
            ]
        elif k in relu_nodes:
            variants = [
                {"name": "bwd-ref", "workspace_bytes": 0, "cost": 4, "deps": sorted(g.deps(k))},
                {"name": "bwd-out", "workspace_bytes": 0, "cost": 4, "deps": [k]},
            ]
            if k in saved_relu:
                variants.append({"name": "bwd-saved", "workspace_bytes": 0,
                                 "cost": 3, "deps": [100 + k]})
        else:
            variants = [
                {"name": "bwd-ref", "workspace_bytes": 0, "cost": 5, "deps": sorted(g.deps(k))},
            ]
        bwd_cat.append({"node": k, "variants": variants})

    catalog_doc = {"format": 1, "forward": fwd_cat, "backward": bwd_cat}
    return g, load_catalog(catalog_doc, g)
