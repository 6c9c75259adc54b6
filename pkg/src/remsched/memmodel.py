"""Closed-form peak-memory accounting for rematerialization schedules.

Store state is a bitmask over the graph's storables (forward outputs and
intermediates, in forward-position order). Rows are numbered 0..B for a
graph with B backward stages: row 0 is what the forward pass keeps, row
t is what stage t writes for later stages, and stage t runs with row
t-1 carried in ("prev") while producing row t ("cur"). Four peak states
are modeled, all inclusive of parameter bytes:

  forward_mem            running forward step i
  backward_mem           executing backward stage t
  recompute_mem_active   stage t's recompute sweep at position i, i recomputed
  recompute_mem_inactive the same sweep position when i is skipped

The active form at a skipped position delegates to the inactive form;
the active expression dominates the inactive one termwise, which is why
emitting both in the integer program for every position is sound.
"""

from __future__ import annotations

from fractions import Fraction

from .costmodel import Catalog, ForwardVariant
from .graph import DependencySets, Graph


def mask_bytes(mask: int, sizes: tuple[int, ...]) -> int:
    total = 0
    while mask:
        low = mask & -mask
        total += sizes[low.bit_length() - 1]
        mask &= mask - 1
    return total


class MemModel:
    """Precomputed masks and constants for the four peak-state formulas."""

    def __init__(self, g: Graph, sets: DependencySets, catalog: Catalog):
        self.g = g
        self.sets = sets
        self.catalog = catalog

        storables = g.storables
        self.n_storables = len(storables)
        self.sizes = tuple(u.nbytes for u in storables)
        self.bit_of_id = {u.id: b for b, u in enumerate(storables)}
        self.id_of_bit = tuple(u.id for u in storables)

        n = g.n
        fwd_bit = {i: self.bit_of_id[i] for i in range(1, n + 1)}

        # Per sweep position i: storables that exist during the sweep at i
        # (forward outputs strictly before i, intermediates created at or
        # before i) and the complementary tail gated by the carried row.
        self.sweep_mask_strict = [0] * (n + 1)   # fwd < i, ints <= i
        self.sweep_mask_incl = [0] * (n + 1)     # fwd <= i, ints <= i
        self.tail_mask = [0] * (n + 1)           # pos > i
        for i in range(1, n + 1):
            strict = incl = 0
            for b, u in enumerate(storables):
                if u.is_intermediate:
                    if u.pos <= i:
                        strict |= 1 << b
                        incl |= 1 << b
                else:
                    if u.pos < i:
                        strict |= 1 << b
                        incl |= 1 << b
                    elif u.pos == i:
                        incl |= 1 << b
            self.sweep_mask_strict[i] = strict
            self.sweep_mask_incl[i] = incl
            self.tail_mask[i] = ((1 << self.n_storables) - 1) & ~incl

        # Forward pass: stored tensors that precede step i but are not in
        # the local set (local-set members are unconditional).
        self.local_bytes = {i: sets.local_bytes(g, i) for i in range(1, n + 1)}
        self.forward_extra_mask = [0] * (n + 1)
        for i in range(1, n + 1):
            m = 0
            local = sets.local_fwd[i]
            for b, u in enumerate(storables):
                if u.is_intermediate:
                    if u.pos <= i:
                        m |= 1 << b
                elif u.pos < i and u.id not in local:
                    m |= 1 << b
            self.forward_extra_mask[i] = m

        # Per (stage, backward variant): dependency masks; per position i on
        # top: the unconditional ("dep") and row-gated ("alpha") buckets of
        # the two sweep formulas.
        stages = g.stage_nodes
        self.n_stages = len(stages)
        self.stage_node = {t: stages[t - 1] for t in range(1, self.n_stages + 1)}

        self.d_mask: dict[tuple[int, int], int] = {}
        self.bwd_const: dict[tuple[int, int], int] = {}
        self.bwd_alpha_mask: dict[tuple[int, int], int] = {}
        self.active_dep_bytes: dict[tuple[int, int, int], int] = {}
        self.active_alpha_mask: dict[tuple[int, int, int], int] = {}
        self.active_base: dict[tuple[int, int], int] = {}
        self.inactive_dep_bytes: dict[tuple[int, int, int], int] = {}
        self.inactive_alpha_mask: dict[tuple[int, int, int], int] = {}
        self.local_bound_bytes: dict[tuple[int, int], int] = {}

        all_mask = (1 << self.n_storables) - 1
        for t in range(1, self.n_stages + 1):
            k = self.stage_node[t]
            grad_live = sets.grad_live_bytes[k]
            for i in range(1, k + 1):
                self.local_bound_bytes[(i, t)] = sets.local_bound_bytes(g, i, k)
            for l, variant in enumerate(catalog.bwd(k)):
                dmask = 0
                for d in variant.deps:
                    dmask |= 1 << self.bit_of_id[d]
                self.d_mask[(t, l)] = dmask
                self.bwd_alpha_mask[(t, l)] = all_mask & ~dmask
                self.bwd_const[(t, l)] = (variant.workspace_bytes + grad_live
                                          + g.params_bytes
                                          + mask_bytes(dmask, self.sizes))
                for i in range(1, k + 1):
                    lb_mask = 0
                    for j in sets.local_bound[(i, k)]:
                        lb_mask |= 1 << fwd_bit[j]
                    strict = self.sweep_mask_strict[i]
                    incl = self.sweep_mask_incl[i]
                    self.active_dep_bytes[(t, l, i)] = mask_bytes(
                        strict & dmask & ~lb_mask, self.sizes)
                    self.active_alpha_mask[(t, l, i)] = strict & ~dmask & ~lb_mask
                    self.inactive_dep_bytes[(t, l, i)] = mask_bytes(incl & dmask, self.sizes)
                    self.inactive_alpha_mask[(t, l, i)] = incl & ~dmask
            for i in range(1, k + 1):
                self.active_base[(t, i)] = (g.output_bytes(i)
                                            + self.local_bound_bytes[(i, t)]
                                            + grad_live + g.params_bytes)

    # -- mask helpers ------------------------------------------------------

    def bytes_of(self, mask: int) -> int:
        return mask_bytes(mask, self.sizes)

    def mask_from_ids(self, ids) -> int:
        m = 0
        for u in ids:
            m |= 1 << self.bit_of_id[u]
        return m

    def ids_from_mask(self, mask: int) -> list[int]:
        out = []
        while mask:
            low = mask & -mask
            out.append(self.id_of_bit[low.bit_length() - 1])
            mask &= mask - 1
        return out

    # -- the four peak states ---------------------------------------------

    def forward_mem(self, i: int, variant: ForwardVariant, store0_mask: int) -> int:
        """Peak during forward step i given the forward store row."""
        return (variant.workspace_bytes
                + self.g.output_bytes(i)
                + self.g.params_bytes
                + self.local_bytes[i]
                + self.bytes_of(store0_mask & self.forward_extra_mask[i]))

    def backward_mem(self, t: int, l: int, cur_mask: int) -> int:
        """Peak while executing backward stage t with variant l, given row t."""
        return (self.bwd_const[(t, l)]
                + self.bytes_of(cur_mask & self.bwd_alpha_mask[(t, l)]))

    def recompute_mem_active(self, t: int, l: int, i: int,
                             re_variant: ForwardVariant | None,
                             prev_mask: int, cur_mask: int) -> int:
        """Peak at sweep position i of stage t when i is recomputed.

        re_variant None means position i is not recomputed; the state is
        then exactly the inactive one.
        """
        if re_variant is None:
            return self.recompute_mem_inactive(t, l, i, prev_mask, cur_mask)
        return (re_variant.workspace_bytes
                + self.active_base[(t, i)]
                + self.active_dep_bytes[(t, l, i)]
                + self.bytes_of(cur_mask & self.active_alpha_mask[(t, l, i)])
                + self.bytes_of(prev_mask & self.tail_mask[i]))

    def recompute_mem_inactive(self, t: int, l: int, i: int,
                               prev_mask: int, cur_mask: int) -> int:
        """Memory at sweep position i of stage t when i is not recomputed."""
        k = self.stage_node[t]
        return (self.sets.grad_live_bytes[k]
                + self.g.params_bytes
                + self.inactive_dep_bytes[(t, l, i)]
                + self.bytes_of(cur_mask & self.inactive_alpha_mask[(t, l, i)])
                + self.bytes_of(prev_mask & self.tail_mask[i]))


def schedule_cost(g: Graph, catalog: Catalog, schedule) -> Fraction:
    """Total compute cost of a schedule: forward + recompute + backward."""
    total = Fraction(0)
    for i in range(1, g.n + 1):
        name = schedule.forward_impls[i - 1]
        total += catalog.fwd(i)[catalog.fwd_index(i, name)].cost
    for stage in schedule.stages:
        for node_id, impl in stage.recompute:
            if impl is None:
                continue
            total += catalog.fwd(node_id)[catalog.fwd_index(node_id, impl)].cost
        total += catalog.bwd(stage.node)[catalog.bwd_index(stage.node,
                                                           stage.backward_impl)].cost
    return total
