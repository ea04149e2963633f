"""Partitioned stiffness assembly with explicit ghost-region bookkeeping.

The element set is split by recursive coordinate bisection into n_parts
pieces.  Partition I integrates every interaction whose inner element it
owns: rows of the accumulated matrix belong to DOFs of owned elements, so
the outer loop must also visit the foreign elements close enough to reach
them.  Those foreign elements form the ghost regions

    gamma_JI = { E owned by J : aprx_min(bbox(E), bbox_I) < delta + eps },

a conservative superset of the true interaction set because the
approximate distance to the partition box is a lower bound for the
distance to any owned element inside it.  gamma_II is defined as the
owned part of the constraint layer, so the union over I of the gamma_II
recovers the layer exactly and the cross sets are pairwise disjoint by
ownership.

Every partition accumulates into a private value buffer over the shared
sparsity pattern.  The merge walks the buffers once per partition in
row-owner order (a DOF row is owned by the partition of the lowest-id
element containing it), so each merged row is produced by exactly one
pass; an audit checks that a buffer only ever holds entries in rows its
partition owns.  Concurrency is a thread pool over nogil kernels; with
n_parts = 1 the result is bit-identical to the serial general-strategy
assembly.
"""

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .assembly import (AssemblyConfig, _Prep, _new_matrix, _run_general,
                       _finish)
from .mesh import partition_geometric


class PartitionContext:
    """What one partition needs to run and what it measured.

    owned: element ids this partition integrates inner-side.
    owned_rows: DOF rows whose merged values this partition produces.
    ghosts: {J: gamma_JI element ids} for J != I.
    t_a / t_t: assembly seconds and assembly-plus-merge seconds.
    """

    def __init__(self, part, owned, owned_rows, ghosts):
        self.part = part
        self.owned = owned
        self.owned_rows = owned_rows
        self.ghosts = ghosts
        self.t_a = 0.0
        self.t_t = 0.0
        self.events = 0

    @property
    def n_outer(self):
        return self.owned.size + sum(g.size for g in self.ghosts.values())

    def __repr__(self):
        return (f"PartitionContext(part={self.part}, owned={self.owned.size}, "
                f"ghost={sum(g.size for g in self.ghosts.values())})")


def ghost_regions(mesh, partition_map, params):
    """Per-pair ghost element sets {(J, I): gamma_JI}.

    gamma_JI (J != I) holds the J-owned elements within approximate
    distance delta + eps of partition I's bounding box; gamma_II holds
    I's constraint-layer elements.
    """
    reach = params.delta + params.eps
    n_parts = partition_map.n_parts
    owner = partition_map.owner
    regions = {}
    for ip in range(n_parts):
        box = partition_map.part_bbox[ip]
        # vectorized aprx_min of every element box against the part box
        d1 = mesh.elem_lo - box.hi
        d2 = box.lo - mesh.elem_hi
        gap = np.maximum(np.maximum(d1, d2), 0.0).max(axis=1)
        near = gap < reach
        for jp in range(n_parts):
            if jp == ip:
                regions[(ip, ip)] = np.nonzero(
                    (owner == ip) & (mesh.elem_region == 1))[0]
            else:
                regions[(jp, ip)] = np.nonzero(near & (owner == jp))[0]
    return regions


def _check_region_relations(mesh, partition_map, regions):
    n_parts = partition_map.n_parts
    gamma_all = np.nonzero(mesh.elem_region == 1)[0]
    cover = []
    for ip in range(n_parts):
        own_gamma = regions[(ip, ip)]
        expect = np.intersect1d(partition_map.owned(ip), gamma_all)
        if not np.array_equal(own_gamma, expect):
            raise AssertionError("gamma_II does not equal the owned layer part")
        cover.append(own_gamma)
        seen = set()
        for jp in range(n_parts):
            if jp == ip:
                continue
            ids = regions[(jp, ip)]
            if seen.intersection(ids.tolist()):
                raise AssertionError("ghost regions of one partition overlap")
            seen.update(ids.tolist())
    cover = np.sort(np.concatenate(cover)) if cover else np.empty(0, np.int64)
    if not np.array_equal(cover, gamma_all):
        raise AssertionError("union of gamma_II misses part of the layer")


def _row_owner(mesh, space, partition_map):
    """Row r belongs to the partition owning the lowest-id element with r."""
    first_elem = np.full(space.n_dofs, mesh.n_elements, dtype=np.int64)
    dofs = space.element_dofs
    for e in range(mesh.n_elements):
        for d in dofs[e, :space.element_nloc[e]]:
            if e < first_elem[d]:
                first_elem[d] = e
    if first_elem.max() >= mesh.n_elements:
        raise AssertionError("dangling DOF without an element")
    return partition_map.owner[first_elem]


def parallel_assemble(mesh, space, kernel, config=None, n_parts=1,
                      partition_map=None):
    """Assemble A = 2(A21 + A22) over n_parts concurrent partitions.

    Returns (A, contexts).  Always uses the pairwise general strategy,
    since the offset-blocked path cannot restrict the inner side to an
    ownership mask.  The merged matrix matches the serial assembly
    bit-for-bit at n_parts = 1 and to rounding otherwise.
    """
    config = config or AssemblyConfig()
    if config.method != "mollified_adaptive":
        raise ValueError("parallel assembly supports the adaptive method only")
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if partition_map is None:
        partition_map = partition_geometric(mesh, n_parts)
    regions = ghost_regions(mesh, partition_map, kernel)
    _check_region_relations(mesh, partition_map, regions)

    prep = _Prep(mesh, space, kernel, config)
    A = _new_matrix(mesh, space, kernel, config)
    row_owner = _row_owner(mesh, space, partition_map)

    contexts = []
    for ip in range(n_parts):
        owned = partition_map.owned(ip)
        ghosts = {jp: regions[(jp, ip)] for jp in range(n_parts) if jp != ip}
        contexts.append(PartitionContext(
            ip, owned, np.nonzero(row_owner == ip)[0], ghosts))

    t_start = time.perf_counter()
    buffers = [A.copy_pattern() for _ in range(n_parts)]

    def work(ctx):
        t0 = time.perf_counter()
        outer = ctx.owned
        if ctx.ghosts:
            outer = np.sort(np.concatenate(
                [outer] + [g for g in ctx.ghosts.values() if g.size]))
        inner_mask = np.zeros(mesh.n_elements, dtype=np.bool_)
        inner_mask[ctx.owned] = True
        ctx.events = _run_general(mesh, space, kernel, config, prep,
                                  buffers[ctx.part],
                                  outer_ids=outer, inner_mask=inner_mask)
        ctx.t_a = time.perf_counter() - t0

    if n_parts == 1:
        work(contexts[0])
    else:
        with ThreadPoolExecutor(max_workers=n_parts) as pool:
            list(pool.map(work, contexts))

    # ownership audit: a buffer may only hold entries in rows of DOFs
    # carried by its partition's own elements
    pitch = np.diff(A.rowptr)
    for ctx in contexts:
        touched = np.nonzero(np.add.reduceat(
            buffers[ctx.part].vals != 0.0, A.rowptr[:-1]))[0]
        touched = touched[pitch[touched] > 0]
        own_dofs = np.unique(space.element_dofs[ctx.owned])
        own_dofs = own_dofs[own_dofs >= 0]
        if not np.isin(touched, own_dofs).all():
            raise AssertionError("partition wrote a row outside its elements")

    # merge: one pass per row owner, each merged row written exactly once
    entry_owner = np.repeat(row_owner, pitch)
    for ctx in contexts:
        sel = entry_owner == ctx.part
        acc = buffers[0].vals[sel].copy()
        for jp in range(1, n_parts):
            acc += buffers[jp].vals[sel]
        A.vals[sel] = acc
        ctx.t_t = time.perf_counter() - t_start

    A.events = sum(ctx.events for ctx in contexts)
    return _finish(A, config), contexts
