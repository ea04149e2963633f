"""Stiffness assembly for the mollified nonlocal operator.

The matrix is A = 2(A21 + A22) where, for every admissible element pair
(outer l, inner m),

  A21[i, j] -= sum_q2 sum_q1 gamma(x_q2, y_q1) phi_i(y_q1) phi_j(x_q2) w1 w2
  A22[i, j] += sum_q2 sum_q1 gamma(x_q2, y_q1) phi_i(y_q1) phi_j(y_q1) w1 w2

with rows over the inner element's DOFs. The outer integral is refined
recursively (midpoint splits, levels L_min..L_max) steered by conservative
box distances; the inner integral always uses the plain per-element rule.

Two execution strategies produce the same matrix:

  general  -- explicit candidate lists, one adaptive recursion per pair;
              works for every mesh and is the unit of parallel assembly.
  blocked  -- on a pure-kind uniform grid the pair geometry only depends
              on the cell offset and the proto shapes, so the recursion
              runs once per (offset, proto pair) and the resulting blocks
              are scattered over all realized pairs.

Matrices live on an implicit structured sparsity pattern: DOFs sit on a
grid, row r couples only to columns within K grid steps per axis, so the
column set is an axis-aligned box clipped to the grid and only values are
stored.

assemble_barycenter implements the single-level baseline: outer points on
whole elements, the inner element contributing as a whole with the sharp
kernel whenever its barycenter lies within delta of the outer point.
"""

import math

import numpy as np

from . import _kernels as _k
from .fe_space import eval_shape_functions
from .kernel import mollifier
from .mesh import BoundingBox
from .quadrature import map_to_physical, rule_for_kind

_N_PROTO = {"quad": 1, "tri": 2, "hex": 1}

# reference corner offsets of the two triangle protos, in cell units:
# lower (sw, se, ne), upper (sw, ne, nw)
_TRI_PROTOS = np.array(
    [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
     [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]])


class AssemblyConfig:
    """Assembly knobs: method, recursion depth window, quadrature presets.

    strategy "auto" picks the offset-blocked fast path on pure-kind meshes
    and the general pairwise path otherwise.
    """

    def __init__(self, method="mollified_adaptive", L_min=1, L_max=3,
                 outer_rule="default", inner_rule="default", strategy="auto",
                 symmetrize=False):
        if method not in ("mollified_adaptive", "barycenter"):
            raise ValueError(f"unknown assembly method {method!r}")
        if not (1 <= L_min <= L_max):
            raise ValueError("need 1 <= L_min <= L_max")
        if L_max > 24:
            raise ValueError("L_max > 24 exceeds the recursion stack bound")
        if strategy not in ("auto", "general", "blocked"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.method = method
        self.L_min = int(L_min)
        self.L_max = int(L_max)
        self.outer_rule = outer_rule
        self.inner_rule = inner_rule
        self.strategy = strategy
        # Averaging A with its transpose spoils the exact reproduction of
        # linear fields (the raw quadrature rows annihilate them) once the
        # outer and inner point sets differ, so it is opt-in only.
        self.symmetrize = bool(symmetrize)

    def __repr__(self):
        return (f"AssemblyConfig({self.method}, L=[{self.L_min},"
                f"{self.L_max}], outer={self.outer_rule!r}, "
                f"inner={self.inner_rule!r}, strategy={self.strategy})")


# ---------------------------------------------------------------------------
# conservative box distances

def _box_lo_hi(box):
    if isinstance(box, BoundingBox):
        return box.lo, box.hi
    lo, hi = box
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def aprx_min_dist(box_a, box_b):
    """Lower bound on the distance between any two points of the boxes:
    the largest single-axis gap, zero when the boxes overlap."""
    alo, ahi = _box_lo_hi(box_a)
    blo, bhi = _box_lo_hi(box_b)
    gaps = np.maximum(alo - bhi, blo - ahi)
    return float(max(gaps.max(), 0.0))


def aprx_max_dist(box_a, box_b):
    """Upper bound on the distance between any two points of the boxes:
    Euclidean combination of the per-axis extreme separations."""
    alo, ahi = _box_lo_hi(box_a)
    blo, bhi = _box_lo_hi(box_b)
    d = np.maximum(np.abs(alo - bhi), np.abs(blo - ahi))
    return float(np.sqrt((d * d).sum()))


# ---------------------------------------------------------------------------
# candidate (neighbor) sets

class NeighborSets:
    """CSR candidate lists: for outer element l, the inner elements m with
    aprx_min_dist(bbox_l, bbox_m) < delta + eps (l itself included)."""

    def __init__(self, outer_ids, ptr, ids):
        self.outer_ids = outer_ids
        self.ptr = ptr
        self.ids = ids
        self._pos = {int(l): i for i, l in enumerate(outer_ids)}

    def of(self, l):
        i = self._pos[int(l)]
        return self.ids[self.ptr[i]:self.ptr[i + 1]]

    def __len__(self):
        return len(self.outer_ids)


def _cell_flat(mesh):
    c = mesh.elem_cell
    nc = mesh.grid_ncells
    flat = c[:, 1].astype(np.int64) * nc[0] + c[:, 0]
    if mesh.dim == 3:
        flat += c[:, 2].astype(np.int64) * (nc[0] * nc[1])
    return flat.astype(np.int32)


def _cell_ptr(mesh):
    # elements are emitted cell-lex ordered, so a searchsorted suffices
    flat = _cell_flat(mesh)
    ncells = int(np.prod(mesh.grid_ncells))
    return flat, np.searchsorted(flat, np.arange(ncells + 1)).astype(np.int64)


def _stencil_radius(reach, h):
    # cells |offset| <= R can have box gap < reach; +1e-12 keeps this a
    # superset under float roundoff (exact per-pair check prunes)
    return int(math.floor(reach / h + 1e-12)) + 1


def _candidates(mesh, reach, outer_ids, inner_mask):
    flat, cptr = _cell_ptr(mesh)
    nc = mesh.grid_ncells
    ncx = int(nc[0])
    ncy = int(nc[1])
    ncz = int(nc[2]) if mesh.dim == 3 else 1
    R = _stencil_radius(reach, mesh.h)
    outer_ids = np.ascontiguousarray(outer_ids, dtype=np.int64)
    counts = np.empty(len(outer_ids), dtype=np.int64)
    _k._count_candidates(outer_ids, flat, mesh.elem_lo, mesh.elem_hi,
                         inner_mask, cptr, ncx, ncy, ncz, R, mesh.dim,
                         reach, counts)
    ptr = np.zeros(len(outer_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    ids = np.empty(ptr[-1], dtype=np.int64)
    _k._fill_candidates(outer_ids, flat, mesh.elem_lo, mesh.elem_hi,
                        inner_mask, cptr, ncx, ncy, ncz, R, mesh.dim,
                        reach, ptr, ids)
    return ptr, ids


def neighbor_sets(mesh, params):
    """Candidate inner elements per outer element for kernel params."""
    outer = np.arange(mesh.n_elements, dtype=np.int64)
    mask = np.ones(mesh.n_elements, dtype=np.bool_)
    ptr, ids = _candidates(mesh, params.delta + params.eps, outer, mask)
    return NeighborSets(outer, ptr, ids)


# ---------------------------------------------------------------------------
# implicit-pattern sparse matrix

class SparseMatrix:
    """Values-only sparse matrix on the structured DOF grid.

    Row r holds the columns in the axis-aligned grid box of half-width K
    around r's grid coordinate, in ascending column order. The pattern is
    structurally symmetric and may contain explicit zeros.
    """

    def __init__(self, space, K):
        dims = space.grid_dims
        self.NX = int(dims[0])
        self.NY = int(dims[1])
        self.NZ = int(dims[2]) if len(dims) == 3 else 1
        self.K = int(K)
        self.n = space.n_dofs
        r = np.arange(self.n, dtype=np.int64)
        gx = (r % self.NX).astype(np.int32)
        t = r // self.NX
        gy = (t % self.NY).astype(np.int32)
        gz = (t // self.NY).astype(np.int32)
        self.gx, self.gy, self.gz = gx, gy, gz

        def width(g, N):
            lo = np.maximum(g - self.K, 0)
            hi = np.minimum(g + self.K, N - 1)
            return (hi - lo + 1).astype(np.int64)

        row_nnz = width(gx, self.NX) * width(gy, self.NY)
        if self.NZ > 1:
            row_nnz *= width(gz, self.NZ)
        self.rowptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(row_nnz, out=self.rowptr[1:])
        self.vals = np.zeros(self.rowptr[-1], dtype=np.float64)
        self.presym_asymmetry = None
        self.events = None

    @property
    def nnz(self):
        return int(self.rowptr[-1])

    @property
    def n_rows(self):
        return self.n

    @property
    def n_cols(self):
        return self.n

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.empty(self.n)
        _k._matvec(self.rowptr, self.vals, x, y,
                   self.NX, self.NY, self.NZ, self.K, self.n)
        return y

    def __matmul__(self, x):
        return self.matvec(x)

    def symmetrize_(self):
        _k._symmetrize(self.rowptr, self.vals, self.gx, self.gy, self.gz,
                       self.NX, self.NY, self.NZ, self.K, self.n)

    def asymmetry_inf(self):
        """inf-norm of A - A^T."""
        return _k._asymmetry_inf(self.rowptr, self.vals, self.gx, self.gy,
                                 self.gz, self.NX, self.NY, self.NZ,
                                 self.K, self.n)

    def norm_inf(self):
        return _k._norm_inf(self.rowptr, self.vals, self.n)

    def diag(self):
        out = np.empty(self.n)
        _k._diag(self.rowptr, self.vals, self.gx, self.gy, self.gz,
                 self.NX, self.NY, self.K, self.n, out)
        return out

    def row_cols(self, r):
        xlo = max(self.gx[r] - self.K, 0)
        xhi = min(self.gx[r] + self.K, self.NX - 1)
        ylo = max(self.gy[r] - self.K, 0)
        yhi = min(self.gy[r] + self.K, self.NY - 1)
        zlo = max(self.gz[r] - self.K, 0)
        zhi = min(self.gz[r] + self.K, self.NZ - 1)
        cx = np.arange(xlo, xhi + 1)
        cy = np.arange(ylo, yhi + 1)
        cz = np.arange(zlo, zhi + 1)
        return ((cz[:, None, None] * self.NY + cy[None, :, None])
                * self.NX + cx[None, None, :]).ravel()

    def row_entries(self, r):
        return self.row_cols(r), self.vals[self.rowptr[r]:self.rowptr[r + 1]]

    def to_scipy(self):
        from scipy.sparse import csr_matrix
        cols = np.empty(self.nnz, dtype=np.int64)
        _k._fill_cols(self.rowptr, cols, self.gx, self.gy, self.gz,
                      self.NX, self.NY, self.NZ, self.K, self.n)
        return csr_matrix((self.vals.copy(), cols, self.rowptr.copy()),
                          shape=(self.n, self.n))

    def toarray(self):
        return self.to_scipy().toarray()

    def copy_pattern(self):
        """New all-zero matrix sharing this pattern's metadata."""
        other = object.__new__(SparseMatrix)
        other.NX, other.NY, other.NZ = self.NX, self.NY, self.NZ
        other.K, other.n = self.K, self.n
        other.gx, other.gy, other.gz = self.gx, self.gy, self.gz
        other.rowptr = self.rowptr
        other.vals = np.zeros_like(self.vals)
        other.presym_asymmetry = None
        other.events = None
        return other

    def __repr__(self):
        return f"SparseMatrix(n={self.n}, K={self.K}, nnz={self.nnz})"


def pattern_halfwidth(mesh, params, config, degree):
    """Grid half-width K of the coupling box for one row.

    Realized pairs have cell offsets |d| <= Oe, and the DOFs of two
    elements offset by d are at most degree*(|d|+1) grid steps apart.
    """
    if config.method == "barycenter":
        # inner barycenter within delta of a point of the outer element;
        # barycenter sits up to f*h from its cell face
        f = 2.0 / 3.0 if mesh.kind in ("tri", "mixed") else 0.5
        oe = int(math.floor(params.delta / mesh.h + f + 1e-12))
    else:
        reach = params.delta + params.eps
        oe = int(math.floor(reach / mesh.h + 1e-12)) + 1
    return degree * (oe + 1), oe


# ---------------------------------------------------------------------------
# rule/table preparation shared by the strategies

class _Prep:
    def __init__(self, mesh, space, params, config):
        dim = mesh.dim
        box_kind = "hex" if dim == 3 else "quad"
        outer_preset = config.outer_rule
        if outer_preset == "default" and config.method == "barycenter":
            outer_preset = "lobatto3"
        self.box_out = rule_for_kind(box_kind, outer_preset)
        self.box_in = rule_for_kind(box_kind, config.inner_rule)
        self.tri_out = rule_for_kind("tri", outer_preset)
        self.tri_in = rule_for_kind("tri", config.inner_rule)
        deg = space.degree
        self.PHI_box_in = eval_shape_functions(box_kind, deg,
                                               self.box_in.ref_points)
        self.PHI_tri_in = eval_shape_functions("tri", deg,
                                               self.tri_in.ref_points)
        self.box_out_pts = np.ascontiguousarray(self.box_out.ref_points)
        self.box_out_w = np.ascontiguousarray(self.box_out.weights)
        self.box_in_pts = np.ascontiguousarray(self.box_in.ref_points)
        self.box_in_w = np.ascontiguousarray(self.box_in.weights)
        self.tri_out_pts = np.ascontiguousarray(self.tri_out.ref_points)
        self.tri_out_w = np.ascontiguousarray(self.tri_out.weights)
        self.tri_in_pts = np.ascontiguousarray(self.tri_in.ref_points)
        self.tri_in_w = np.ascontiguousarray(self.tri_in.weights)


def _new_matrix(mesh, space, params, config):
    K, oe = pattern_halfwidth(mesh, params, config, space.degree)
    A = SparseMatrix(space, K)
    A._offset_reach = oe
    return A


# ---------------------------------------------------------------------------
# the two adaptive strategies

def _run_general(mesh, space, params, config, prep, A,
                 outer_ids=None, inner_mask=None):
    if outer_ids is None:
        outer_ids = np.arange(mesh.n_elements, dtype=np.int64)
    if inner_mask is None:
        inner_mask = np.ones(mesh.n_elements, dtype=np.bool_)
    reach = params.delta + params.eps
    ptr, ids = _candidates(mesh, reach, outer_ids, inner_mask)
    ev = _k._general_core(
        mesh.dim, space.degree,
        mesh.elem_kind, mesh.elem_coords, mesh.elem_lo, mesh.elem_hi,
        space.element_dofs, space.element_nloc,
        outer_ids, ptr, ids,
        prep.box_out_pts, prep.box_out_w, prep.box_in_pts, prep.box_in_w,
        prep.tri_out_pts, prep.tri_out_w, prep.tri_in_pts, prep.tri_in_w,
        prep.PHI_box_in, prep.PHI_tri_in,
        params.delta, params.eps, params.c_delta_eps,
        config.L_min, config.L_max,
        A.gx, A.gy, A.gz, A.NX, A.NY, A.K, A.rowptr, A.vals)
    return ev


def _run_blocked(mesh, space, params, config, prep, A):
    dim = mesh.dim
    kind = mesh.kind
    kcode = {"quad": 0, "tri": 1, "hex": 2}[kind]
    nproto = _N_PROTO[kind]
    protos = _TRI_PROTOS if kind == "tri" else np.zeros((1, 3, 2))
    R = A._offset_reach
    nloc = 3 * space.degree if kind == "tri" else (space.degree + 1) ** dim
    span = 2 * R + 1
    nblk_max = span * span * (span if dim == 3 else 1) * nproto * nproto
    B21 = np.zeros((nblk_max, nloc, nloc))
    B22 = np.zeros((nblk_max, nloc, nloc))
    blk_delta = np.zeros((nblk_max, 3), dtype=np.int32)
    blk_proto = np.zeros((nblk_max, 2), dtype=np.int8)
    blk_events = np.zeros(nblk_max, dtype=np.int64)
    nblk = _k._build_offset_blocks(
        dim, space.degree, kcode, mesh.h, protos, R,
        prep.box_out_pts, prep.box_out_w, prep.box_in_pts, prep.box_in_w,
        prep.tri_out_pts, prep.tri_out_w, prep.tri_in_pts, prep.tri_in_w,
        prep.PHI_box_in, prep.PHI_tri_in,
        params.delta, params.eps, params.c_delta_eps,
        config.L_min, config.L_max,
        B21, B22, blk_delta, blk_proto, blk_events)
    return _scatter_blocked(mesh, space, A, nproto, nloc,
                            B21, B22, blk_delta, blk_proto, blk_events, nblk)


def _scatter_blocked(mesh, space, A, nproto, nloc,
                     B21, B22, blk_delta, blk_proto, blk_events, nblk):
    order = np.argsort(blk_proto[:nblk, 1], kind="stable")
    B21 = np.ascontiguousarray(B21[:nblk][order])
    B22 = np.ascontiguousarray(B22[:nblk][order])
    blk_delta = np.ascontiguousarray(blk_delta[:nblk][order])
    blk_proto = np.ascontiguousarray(blk_proto[:nblk][order])
    blk_events = np.ascontiguousarray(blk_events[:nblk][order])
    blk_ptr = np.searchsorted(blk_proto[:, 1],
                              np.arange(nproto + 1)).astype(np.int64)
    nc = mesh.grid_ncells
    ncx = int(nc[0])
    ncy = int(nc[1])
    ncz = int(nc[2]) if mesh.dim == 3 else 1
    events = _k._scatter_offset_blocks(
        mesh.dim, nproto, ncx, ncy, ncz, nloc,
        space.element_dofs, B21, B22, blk_delta, blk_proto, blk_ptr,
        blk_events,
        A.gx, A.gy, A.gz, A.NX, A.NY, A.K, A.rowptr, A.vals)
    return events


def _finish(A, config):
    A.vals *= 2.0
    A.presym_asymmetry = A.asymmetry_inf()
    if config.symmetrize:
        A.symmetrize_()
    return A


def _resolve_strategy(mesh, config):
    if config.strategy == "blocked" and mesh.kind not in ("quad", "tri", "hex"):
        raise ValueError("blocked strategy needs a pure-kind mesh")
    if config.strategy != "auto":
        return config.strategy
    return "blocked" if mesh.kind in ("quad", "tri", "hex") else "general"


def assemble(mesh, space, kernel, config=None):
    """Assemble the stiffness matrix A = 2(A21 + A22).

    The result is symmetric up to quadrature error (exactly so with matched
    outer/inner rules and L_min = L_max); the measured pre-symmetrization
    asymmetry is stored on the matrix as a diagnostic.
    """
    config = config or AssemblyConfig()
    if config.method == "barycenter":
        return assemble_barycenter(mesh, space, kernel, config)
    prep = _Prep(mesh, space, kernel, config)
    A = _new_matrix(mesh, space, kernel, config)
    strategy = _resolve_strategy(mesh, config)
    if strategy == "blocked":
        A.events = _run_blocked(mesh, space, kernel, config, prep, A)
    else:
        A.events = _run_general(mesh, space, kernel, config, prep, A)
    return _finish(A, config)


# ---------------------------------------------------------------------------
# barycenter baseline

def _bary_tables(mesh, space, prep, element_ids=None):
    """Per-element barycenter, integrated basis vector b[i] = int phi_i,
    and mass block M[i, j] = int phi_i phi_j (padded to nloc_max)."""
    n = mesh.n_elements
    deg = space.degree
    dim = mesh.dim
    nl_box = (deg + 1) ** dim
    nl_tri = 3 * deg
    nloc_max = max(nl_box, nl_tri) if mesh.kind in ("tri", "mixed") else nl_box
    bary = np.zeros((n, 3))
    bvec = np.zeros((n, nloc_max))
    bmat = np.zeros((n, nloc_max, nloc_max))
    kinds = mesh.elem_kind
    for code, PHI, rule, nloc in ((1, prep.PHI_tri_in, prep.tri_in, nl_tri),
                                  (0, prep.PHI_box_in, prep.box_in, nl_box),
                                  (2, prep.PHI_box_in, prep.box_in, nl_box)):
        sel = np.nonzero(kinds == code)[0]
        if element_ids is not None:
            sel = np.intersect1d(sel, element_ids)
        if len(sel) == 0:
            continue
        if code == 1:
            v = mesh.elem_coords[sel, :3, :]
            bary[sel, :dim] = v.mean(axis=1)
            e1 = v[:, 1] - v[:, 0]
            e2 = v[:, 2] - v[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        else:
            lo = mesh.elem_lo[sel]
            hi = mesh.elem_hi[sel]
            bary[sel, :dim] = 0.5 * (lo + hi)
            det = (0.5 * (hi - lo)).prod(axis=1)
        wphi = rule.weights[:, None] * PHI          # (nq, nloc)
        bvec[np.ix_(sel, np.arange(nloc))] = det[:, None] * wphi.sum(axis=0)
        blk = np.einsum("qi,qj->ij", wphi, PHI)
        bmat[np.ix_(sel, np.arange(nloc), np.arange(nloc))] = (
            det[:, None, None] * blk)
    return bary, bvec, bmat


def bary_candidates(mesh, delta, outer_ids, inner_mask, bary):
    """Candidate lists for the baseline: inner m whose barycenter is within
    delta (inclusive, exact point-box distance) of the outer bbox."""
    flat, cptr = _cell_ptr(mesh)
    nc = mesh.grid_ncells
    dim = mesh.dim
    R = _stencil_radius(delta, mesh.h) + 1
    ncs = [int(nc[k]) for k in range(dim)]
    cells = mesh.elem_cell
    ptr = [0]
    ids = []
    for l in outer_ids:
        c = cells[l]
        ranges = [range(max(c[k] - R, 0), min(c[k] + R, ncs[k] - 1) + 1)
                  for k in range(dim)]
        cand = []
        if dim == 2:
            for y2 in ranges[1]:
                base = y2 * ncs[0]
                for x2 in ranges[0]:
                    cc = base + x2
                    cand.extend(range(cptr[cc], cptr[cc + 1]))
        else:
            for z2 in ranges[2]:
                for y2 in ranges[1]:
                    base = (z2 * ncs[1] + y2) * ncs[0]
                    for x2 in ranges[0]:
                        cc = base + x2
                        cand.extend(range(cptr[cc], cptr[cc + 1]))
        cand = np.array(cand, dtype=np.int64)
        if len(cand):
            cand = cand[inner_mask[cand]]
        if len(cand):
            b = bary[cand, :dim]
            gap = np.maximum(mesh.elem_lo[l][None, :] - b,
                             b - mesh.elem_hi[l][None, :])
            gap = np.maximum(gap, 0.0)
            d2 = (gap * gap).sum(axis=1)
            # same tie slack as the quadrature-point gate
            cand = cand[d2 <= delta * delta * (1.0 + 1e-12)]
        ids.append(cand)
        ptr.append(ptr[-1] + len(cand))
    ids = (np.concatenate(ids) if ids else np.empty(0, dtype=np.int64))
    return np.array(ptr, dtype=np.int64), ids.astype(np.int64)


def assemble_barycenter(mesh, space, kernel, config=None):
    """Single-level baseline assembly with the sharp kernel."""
    config = config or AssemblyConfig(method="barycenter")
    if kernel.eps != 0.0:
        raise ValueError("barycenter baseline requires eps = 0")
    prep = _Prep(mesh, space, kernel, config)
    A = _new_matrix(mesh, space, kernel, config)
    cd = kernel.c_delta
    strategy = _resolve_strategy(mesh, config)
    if strategy == "blocked":
        kind = mesh.kind
        kcode = {"quad": 0, "tri": 1, "hex": 2}[kind]
        nproto = _N_PROTO[kind]
        protos = _TRI_PROTOS if kind == "tri" else np.zeros((1, 3, 2))
        deg = space.degree
        dim = mesh.dim
        nloc = 3 * deg if kind == "tri" else (deg + 1) ** dim
        # proto element tables at the grid origin cell
        pb = np.zeros((nproto, 3))
        pv = np.zeros((nproto, nloc))
        pm = np.zeros((nproto, nloc, nloc))
        h = mesh.h
        for t in range(nproto):
            if kind == "tri":
                v = protos[t] * h
                pb[t, :2] = v.mean(axis=0)
                e1 = v[1] - v[0]
                e2 = v[2] - v[0]
                det = e1[0] * e2[1] - e1[1] * e2[0]
                PHI = prep.PHI_tri_in
                w = prep.tri_in.weights
            else:
                pb[t, :dim] = 0.5 * h
                det = (0.5 * h) ** dim
                PHI = prep.PHI_box_in
                w = prep.box_in.weights
            wphi = w[:, None] * PHI
            pv[t] = det * wphi.sum(axis=0)
            pm[t] = det * np.einsum("qi,qj->ij", wphi, PHI)
        R = A._offset_reach
        span = 2 * R + 1
        nblk_max = span * span * (span if dim == 3 else 1) * nproto * nproto
        B21 = np.zeros((nblk_max, nloc, nloc))
        B22 = np.zeros((nblk_max, nloc, nloc))
        blk_delta = np.zeros((nblk_max, 3), dtype=np.int32)
        blk_proto = np.zeros((nblk_max, 2), dtype=np.int8)
        blk_events = np.zeros(nblk_max, dtype=np.int64)
        nblk = _k._bary_offset_blocks(
            dim, deg, kcode, h, protos, R,
            prep.box_out_pts, prep.box_out_w,
            prep.tri_out_pts, prep.tri_out_w,
            pb, pv, pm, cd, kernel.delta,
            B21, B22, blk_delta, blk_proto, blk_events)
        A.events = _scatter_blocked(mesh, space, A, nproto, nloc,
                                    B21, B22, blk_delta, blk_proto,
                                    blk_events, nblk)
    else:
        bary, bvec, bmat = _bary_tables(mesh, space, prep)
        outer = np.arange(mesh.n_elements, dtype=np.int64)
        mask = np.ones(mesh.n_elements, dtype=np.bool_)
        ptr, ids = bary_candidates(mesh, kernel.delta, outer, mask, bary)
        A.events = _k._bary_general(
            mesh.dim, space.degree,
            mesh.elem_kind, mesh.elem_coords, mesh.elem_lo, mesh.elem_hi,
            space.element_dofs, space.element_nloc,
            outer, ptr, ids,
            prep.box_out_pts, prep.box_out_w,
            prep.tri_out_pts, prep.tri_out_w,
            bary, bvec, bmat, cd, kernel.delta,
            A.gx, A.gy, A.gz, A.NX, A.NY, A.K, A.rowptr, A.vals)
    return _finish(A, config)


# ---------------------------------------------------------------------------
# right-hand side

def _group_load(mesh, space, f, element_ids):
    load = np.zeros(space.n_dofs)
    deg = space.degree
    dim = mesh.dim
    box_kind = "hex" if dim == 3 else "quad"
    kinds = mesh.elem_kind
    protos = mesh.elem_proto
    for code, kname in ((0, box_kind), (1, "tri"), (2, box_kind)):
        sel = element_ids[kinds[element_ids] == code]
        if len(sel) == 0:
            continue
        rule = rule_for_kind(kname if code != 1 else "tri",
                             "gauss" + str(deg + 2) if code != 1 else "default")
        PHI = eval_shape_functions(kname, deg, rule.ref_points)
        if code == 1:
            v = mesh.elem_coords[sel, :3, :]
            e1 = v[:, 1] - v[:, 0]
            e2 = v[:, 2] - v[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            r = rule.ref_points
            pts = (v[:, None, 0, :] + r[None, :, 0, None] * e1[:, None, :]
                   + r[None, :, 1, None] * e2[:, None, :])
        else:
            lo = mesh.elem_lo[sel]
            hi = mesh.elem_hi[sel]
            det = (0.5 * (hi - lo)).prod(axis=1)
            r = rule.ref_points
            pts = (lo[:, None, :]
                   + (r[None, :, :] + 1.0) * 0.5 * (hi - lo)[:, None, :])
        fv = np.asarray(f(pts.reshape(-1, dim)), dtype=float)
        fv = fv.reshape(len(sel), len(rule))
        contrib = np.einsum("eq,q,qi->ei", fv * det[:, None],
                            rule.weights, PHI)
        nloc = PHI.shape[1]
        np.add.at(load, space.element_dofs[sel, :nloc], contrib)
    return load


def assemble_rhs(mesh, space, kernel, f, g, A):
    """Load vector over free DOFs with the constraint lifting folded in:
    rhs = (int_Omega f phi)[free] - (A gt)[free], gt the nodal interpolant
    of g on the constrained DOFs and zero elsewhere."""
    load = _group_load(mesh, space, f, mesh.omega_element_ids())
    gt = np.zeros(space.n_dofs)
    if callable(g):
        gt[space.constrained] = g(space.dof_coords[space.constrained])
    else:
        gv = np.asarray(g, dtype=float)
        gt[space.constrained] = (gv[space.constrained]
                                 if gv.shape == (space.n_dofs,) else gv)
    return load[space.free] - A.matvec(gt)[space.free]


# ---------------------------------------------------------------------------
# reference implementations (tests and validation)

class _SubCell:
    """Outer sub-cell: physical geometry plus the owning element for basis
    pull-back."""

    __slots__ = ("kind", "geom", "element", "_level")

    def __init__(self, kind, geom, element):
        self.kind = kind          # "box" or "tri"
        self.geom = geom          # (lo, hi) arrays, or (3, 2) vertex array
        self.element = element

    def bbox(self):
        if self.kind == "box":
            return self.geom
        return self.geom.min(axis=0), self.geom.max(axis=0)

    def measure(self):
        if self.kind == "box":
            lo, hi = self.geom
            return float(np.prod(hi - lo))
        v = self.geom
        return 0.5 * abs((v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1])
                         - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0]))

    def split(self):
        if self.kind == "box":
            lo, hi = self.geom
            mid = 0.5 * (lo + hi)
            dim = len(lo)
            out = []
            for b in range(1 << dim):
                clo = np.array([lo[k] if not (b >> k) & 1 else mid[k]
                                for k in range(dim)])
                chi = np.array([mid[k] if not (b >> k) & 1 else hi[k]
                                for k in range(dim)])
                out.append(_SubCell("box", (clo, chi), self.element))
            return out
        v = self.geom
        m01 = 0.5 * (v[0] + v[1])
        m12 = 0.5 * (v[1] + v[2])
        m20 = 0.5 * (v[2] + v[0])
        mk = lambda a, b, c: _SubCell("tri", np.array([a, b, c]),
                                      self.element)
        return [mk(v[0], m01, m20), mk(m01, v[1], m12),
                mk(m20, m12, v[2]), mk(m01, m12, m20)]


def _subcell_for(mesh, l):
    if mesh.elem_kind[l] == 1:
        return _SubCell("tri", mesh.elem_coords[l, :3, :].copy(), l)
    return _SubCell("box", (mesh.elem_lo[l].copy(), mesh.elem_hi[l].copy()),
                    l)


class BlockAccumulator:
    """Dense accumulator for the reference adaptive assembly.

    Tracks A21/A22 separately and logs one (level, outer sub-cell measure)
    entry per integration event so the midpoint-split telescoping can be
    checked.
    """

    def __init__(self, mesh, space, kernel, config):
        self.mesh = mesh
        self.space = space
        self.kernel = kernel
        self.config = config
        self.prep = _Prep(mesh, space, kernel, config)
        n = space.n_dofs
        self.A21 = np.zeros((n, n))
        self.A22 = np.zeros((n, n))
        self.events = []
        # cached inner data per element
        self._inner = {}

    def inner_data(self, m):
        if m not in self._inner:
            mesh = self.mesh
            el = mesh.elements[m]
            rule = (self.prep.tri_in if mesh.elem_kind[m] == 1
                    else self.prep.box_in)
            pts, w = map_to_physical(rule, el)
            PHI = (self.prep.PHI_tri_in if mesh.elem_kind[m] == 1
                   else self.prep.PHI_box_in)
            self._inner[m] = (pts, w, PHI)
        return self._inner[m]

    def outer_data(self, subcell):
        """Physical outer points/weights on the sub-cell and the owning
        element's basis values there (pull-back of physical points)."""
        mesh = self.mesh
        l = subcell.element
        if subcell.kind == "tri":
            rule = self.prep.tri_out
            v = subcell.geom
            e1 = v[1] - v[0]
            e2 = v[2] - v[0]
            det = e1[0] * e2[1] - e1[1] * e2[0]
            r = rule.ref_points
            pts = v[0] + r[:, :1] * e1 + r[:, 1:] * e2
            w = rule.weights * det
            pv = mesh.elem_coords[l, :3, :]
            E = np.column_stack([pv[1] - pv[0], pv[2] - pv[0]])
            ref = np.linalg.solve(E, (pts - pv[0]).T).T
            PHI = eval_shape_functions("tri", self.space.degree, ref)
        else:
            rule = self.prep.box_out
            lo, hi = subcell.geom
            r = rule.ref_points
            pts = lo + (r + 1.0) * 0.5 * (hi - lo)
            w = rule.weights * np.prod(0.5 * (hi - lo))
            plo = mesh.elem_lo[l]
            phi_ = mesh.elem_hi[l]
            ref = (pts - plo) / (phi_ - plo) * 2.0 - 1.0
            kname = "hex" if mesh.dim == 3 else "quad"
            PHI = eval_shape_functions(kname, self.space.degree, ref)
        return pts, w, PHI


def integrate_pair(subcell, inner_ids, space, kernel, acc):
    """Integrate one outer sub-cell against whole inner elements; add the
    A21/A22 contributions for each pair into the accumulator."""
    x2, w2, PHI2 = acc.outer_data(subcell)
    ld = space.dofs_of(subcell.element)
    level = getattr(subcell, "_level", None)
    for m in inner_ids:
        y1, w1, PHI1 = acc.inner_data(m)
        md = space.dofs_of(m)
        D = np.sqrt(((x2[:, None, :] - y1[None, :, :]) ** 2).sum(axis=2))
        G = kernel.c_delta_eps * mollifier(D, kernel)
        W = G * w2[:, None] * w1[None, :]
        acc.A21[np.ix_(md, ld)] -= np.einsum("qp,pi,qj->ij", W, PHI1, PHI2)
        acc.A22[np.ix_(md, md)] += np.einsum("p,pi,pj->ij",
                                             W.sum(axis=0), PHI1, PHI1)
        acc.events.append((level, subcell.measure()))


def adaptive_element_pair(subcell, J, L_cur, config, acc):
    """Reference outer-cell recursion, kept in the candidate-set form: one
    recursion per outer element over its whole candidate list."""
    if L_cur < config.L_min:
        for child in subcell.split():
            adaptive_element_pair(child, J, L_cur + 1, config, acc)
        return
    subcell._level = L_cur
    if L_cur == config.L_max:
        if len(J):
            integrate_pair(subcell, J, acc.space, acc.kernel, acc)
        return
    dme = acc.kernel.delta - acc.kernel.eps
    dpe = acc.kernel.delta + acc.kernel.eps
    sb = subcell.bbox()
    mesh = acc.mesh
    j_int, j_ref = [], []
    for m in J:
        box_m = (mesh.elem_lo[m], mesh.elem_hi[m])
        if aprx_max_dist(sb, box_m) < dme:
            j_int.append(m)
        elif aprx_min_dist(sb, box_m) < dpe:
            j_ref.append(m)
    if j_int:
        integrate_pair(subcell, j_int, acc.space, acc.kernel, acc)
    if j_ref:
        for child in subcell.split():
            adaptive_element_pair(child, j_ref, L_cur + 1, config, acc)


def assemble_reference(mesh, space, kernel, config=None):
    """Dense assembly through the reference recursion (small meshes only).

    Returns (A, accumulator); A = 2(A21 + A22) post-processed exactly like
    the production path.
    """
    config = config or AssemblyConfig()
    acc = BlockAccumulator(mesh, space, kernel, config)
    sets = neighbor_sets(mesh, kernel)
    for l in range(mesh.n_elements):
        subcell = _subcell_for(mesh, l)
        subcell._level = 1
        adaptive_element_pair(subcell, list(sets.of(l)), 1, config, acc)
    A = 2.0 * (acc.A21 + acc.A22)
    if config.symmetrize:
        A = 0.5 * (A + A.T)
    return A, acc


def assemble_four_terms(mesh, space, kernel, config=None):
    """Dense single-level assembly of all four stiffness terms.

    A11[j, j'] over outer DOFs, A12/A21 cross terms, A22 over inner DOFs;
    with matched inner/outer rules A11 = A22 and A12 = A21 entrywise.
    """
    config = config or AssemblyConfig(L_min=1, L_max=1)
    prep = _Prep(mesh, space, kernel, config)
    n = space.n_dofs
    A11 = np.zeros((n, n))
    A12 = np.zeros((n, n))
    A21 = np.zeros((n, n))
    A22 = np.zeros((n, n))
    sets = neighbor_sets(mesh, kernel)
    dim = mesh.dim
    box_kind = "hex" if dim == 3 else "quad"
    for l in range(mesh.n_elements):
        el = mesh.elements[l]
        if mesh.elem_kind[l] == 1:
            rule2 = prep.tri_out
            PHI2 = eval_shape_functions("tri", space.degree, rule2.ref_points)
        else:
            rule2 = prep.box_out
            PHI2 = eval_shape_functions(box_kind, space.degree,
                                        rule2.ref_points)
        x2, w2 = map_to_physical(rule2, el)
        ld = space.dofs_of(l)
        for m in sets.of(l):
            em = mesh.elements[m]
            if mesh.elem_kind[m] == 1:
                rule1 = prep.tri_in
                PHI1 = prep.PHI_tri_in
            else:
                rule1 = prep.box_in
                PHI1 = prep.PHI_box_in
            y1, w1 = map_to_physical(rule1, em)
            md = space.dofs_of(m)
            D = np.sqrt(((x2[:, None, :] - y1[None, :, :]) ** 2).sum(axis=2))
            W = (kernel.c_delta_eps * mollifier(D, kernel)
                 * w2[:, None] * w1[None, :])
            A21[np.ix_(md, ld)] -= np.einsum("qp,pi,qj->ij", W, PHI1, PHI2)
            A22[np.ix_(md, md)] += np.einsum("p,pi,pj->ij",
                                             W.sum(axis=0), PHI1, PHI1)
            A12[np.ix_(ld, md)] -= np.einsum("qp,qi,pj->ij", W, PHI2, PHI1)
            A11[np.ix_(ld, ld)] += np.einsum("q,qi,qj->ij",
                                             W.sum(axis=1), PHI2, PHI2)
    return A11, A12, A21, A22


def assemble_reference_dense(mesh, space, kernel, config=None,
                             n_split=4, fine_order=5):
    """Independent fine-composite oracle (2D): every outer element is
    pre-split n_split x n_split (triangles into n_split^2 congruent
    sub-triangles) and integrated with a high-order rule, no adaptivity;
    the inner rule matches the production default. Dense output."""
    if mesh.dim != 2:
        raise ValueError("reference oracle is 2D only")
    config = config or AssemblyConfig()
    prep = _Prep(mesh, space, kernel, config)
    # outer composite pieces in reference coords
    t = np.linspace(-1.0, 1.0, n_split + 1)
    sub_boxes = np.array([[t[i], t[j], t[i + 1], t[j + 1]]
                          for j in range(n_split) for i in range(n_split)])
    tris = []
    s = np.linspace(0.0, 1.0, n_split + 1)
    for j in range(n_split):
        for i in range(n_split - j):
            a = (s[i], s[j])
            b = (s[i + 1], s[j])
            c = (s[i], s[j + 1])
            tris.append([a, b, c])
            if i + j < n_split - 1:
                d = (s[i + 1], s[j + 1])
                tris.append([b, d, c])
    sub_tris = np.array(tris)
    fine = rule_for_kind("quad", f"gauss{fine_order}")
    dun = rule_for_kind("tri", "default")
    # fixed scratch capacities inside the compiled kernel
    if (len(fine) * n_split ** 2 > 400 or len(dun) * len(sub_tris) > 400
            or len(prep.box_in) > 64):
        raise ValueError("composite rule exceeds oracle buffer capacity")
    n = space.n_dofs
    A = np.zeros((n, n))
    _k._reference_dense(
        space.degree, mesh.elem_kind, mesh.elem_coords,
        mesh.elem_lo, mesh.elem_hi,
        space.element_dofs, space.element_nloc,
        sub_boxes, sub_tris,
        np.ascontiguousarray(fine.ref_points),
        np.ascontiguousarray(fine.weights),
        np.ascontiguousarray(dun.ref_points),
        np.ascontiguousarray(dun.weights),
        prep.box_in_pts, prep.box_in_w, prep.tri_in_pts, prep.tri_in_w,
        kernel.delta, kernel.eps, kernel.c_delta_eps, A)
    if config.symmetrize:
        A = 0.5 * (A + A.T)
    return A
