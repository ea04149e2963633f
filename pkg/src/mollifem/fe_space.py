"""Lagrange finite element spaces of degree 1 and 2 on structured meshes.

DOFs live on a structured grid of pitch h/degree covering Omega and the
gamma layer; the grid id is (gz*NY + gy)*NX + gx with x fastest. A DOF is
constrained when its node lies in the closure of the gamma layer (on the
Omega boundary or outside), decided in exact integer grid arithmetic.

Reference elements: [-1,1]^dim for quad/hex, the unit simplex for tri
(point (x, y), barycentrics (1-x-y, x, y)). Local orderings follow the
mesh corner conventions; quadratic quads/hexes are tensor-lex over the
3^dim half-grid points, quadratic triangles are corners then edge
midpoints (m01, m12, m20).
"""

import numpy as np

from . import quadrature

__all__ = ["FESpace", "eval_basis", "eval_shape_functions", "interpolate",
           "lifting", "l2_error"]


def _lagrange_1d(degree, x):
    # rows: shape functions at nodes -1(,0),1 of [-1,1]; x is (nq,)
    if degree == 1:
        return np.stack([0.5 * (1.0 - x), 0.5 * (1.0 + x)])
    return np.stack([0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)])


def eval_shape_functions(kind, degree, ref_points):
    """All shape values at ref_points; returns (n_points, n_loc)."""
    pts = np.asarray(ref_points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if kind == "tri":
        lam = np.stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
        if degree == 1:
            return lam
        l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
        return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                         4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=1)
    dim = 3 if kind == "hex" else 2
    per_axis = [_lagrange_1d(degree, pts[:, k]) for k in range(dim)]
    m = degree + 1
    nloc = m ** dim
    out = np.empty((pts.shape[0], nloc))
    for n in range(nloc):
        i, rest = n % m, n // m
        vals = per_axis[0][i]
        for k in range(1, dim):
            vals = vals * per_axis[k][rest % m]
            rest //= m
        out[:, n] = vals
    return out


def eval_basis(element, local_index, ref_point, degree=1):
    """One Lagrange shape value on element's reference domain."""
    kind = element.kind if hasattr(element, "kind") else element
    nloc = {("tri", 1): 3, ("tri", 2): 6}.get(
        (kind, degree), (degree + 1) ** (3 if kind == "hex" else 2))
    if not 0 <= local_index < nloc:
        raise IndexError(f"local_index {local_index} out of range for {kind} degree {degree}")
    return float(eval_shape_functions(kind, degree, ref_point)[0, local_index])


# per-kind local dof offsets on the degree-scaled grid, relative to cell*degree
def _local_offsets(kind, proto, degree, dim):
    if kind == "tri":
        if degree == 1:
            low = [(0, 0), (1, 0), (1, 1)]
            up = [(0, 0), (1, 1), (0, 1)]
        else:
            low = [(0, 0), (2, 0), (2, 2), (1, 0), (2, 1), (1, 1)]
            up = [(0, 0), (2, 2), (0, 2), (1, 1), (1, 2), (0, 1)]
        return up if proto == 1 else low
    m = degree + 1
    if dim == 2:
        return [(i, j) for j in range(m) for i in range(m)]
    return [(i, j, k) for k in range(m) for j in range(m) for i in range(m)]


class FESpace:
    """Continuous Lagrange space over a structured mesh.

    n_dofs counts every DOF including constrained ones. element_dofs is an
    (n_elements, nloc_max) int array padded with -1 where an element has
    fewer local DOFs (mixed meshes). constrained holds the sorted ids of
    DOFs pinned by the volume constraint.
    """

    def __init__(self, mesh, degree=1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        d = degree
        nc = np.asarray(mesh.grid_ncells, dtype=np.int64)
        dims = d * nc + 1
        self.grid_dims = tuple(int(x) for x in dims)
        self.pitch = mesh.h / d
        self.n_dofs = int(np.prod(dims))

        axes = [mesh.grid_origin[k] + self.pitch * np.arange(dims[k])
                for k in range(mesh.dim)]
        if mesh.dim == 2:
            Y, X = np.meshgrid(axes[1], axes[0], indexing="ij")
            self.dof_coords = np.column_stack([X.ravel(), Y.ravel()])
        else:
            Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
            self.dof_coords = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

        # constrained = not strictly inside Omega, in integer grid units
        rings = mesh.gamma_layers
        n_omega = nc - 2 * rings
        in_ax = [(np.arange(dims[k]) > rings * d)
                 & (np.arange(dims[k]) < (rings + n_omega[k]) * d)
                 for k in range(mesh.dim)]
        if mesh.dim == 2:
            inside = in_ax[1][:, None] & in_ax[0][None, :]
        else:
            inside = (in_ax[2][:, None, None] & in_ax[1][None, :, None]
                      & in_ax[0][None, None, :])
        mask = ~inside.ravel()
        self.constrained_mask = mask
        self.constrained = np.nonzero(mask)[0]
        self.free = np.nonzero(~mask)[0]

        self.element_dofs, self.element_nloc = self._build_element_dofs()

    def _build_element_dofs(self):
        mesh, d = self.mesh, self.degree
        NX = self.grid_dims[0]
        NY = self.grid_dims[1] if mesh.dim >= 2 else 1
        nloc_per = []
        offs_cache = {}
        n_elem = mesh.n_elements
        nloc_max = 0
        for kind, proto in zip(mesh.elem_kind, mesh.elem_proto):
            key = (int(kind), int(proto))
            if key not in offs_cache:
                name = {0: "quad", 1: "tri", 2: "hex"}[key[0]]
                offs_cache[key] = np.asarray(
                    _local_offsets(name, key[1], d, mesh.dim), dtype=np.int64)
            nloc_per.append(len(offs_cache[key]))
            nloc_max = max(nloc_max, nloc_per[-1])
        dofs = np.full((n_elem, nloc_max), -1, dtype=np.int64)
        for e in range(n_elem):
            c = mesh.elem_cell[e].astype(np.int64) * d
            offs = offs_cache[(int(mesh.elem_kind[e]), int(mesh.elem_proto[e]))]
            g = c[None, :] + offs
            if mesh.dim == 2:
                ids = g[:, 1] * NX + g[:, 0]
            else:
                ids = (g[:, 2] * NY + g[:, 1]) * NX + g[:, 0]
            dofs[e, : len(ids)] = ids
        return dofs, np.asarray(nloc_per, dtype=np.int32)

    def dofs_of(self, eid):
        return self.element_dofs[eid, : self.element_nloc[eid]]

    def __repr__(self):
        return (f"FESpace(degree={self.degree}, n_dofs={self.n_dofs}, "
                f"constrained={len(self.constrained)})")


def interpolate(space, u):
    """Nodal interpolant of u; u maps an (n, dim) point array to (n,)."""
    P = space.dof_coords
    vals = u(P)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 0:
        vals = np.full(P.shape[0], float(vals))
    if vals.shape != (P.shape[0],):
        raise ValueError("field must evaluate to one value per point")
    return vals


def lifting(space, g):
    """Interpolant of g on constrained DOFs, zero on free DOFs."""
    out = np.zeros(space.n_dofs)
    P = space.dof_coords[space.constrained]
    vals = np.asarray(g(P), dtype=float)
    if vals.ndim == 0:
        vals = np.full(P.shape[0], float(vals))
    out[space.constrained] = vals
    return out


def _region_ids(mesh, region):
    if region == "omega":
        return np.nonzero(mesh.elem_region == 0)[0]
    if region == "omega_and_gamma":
        return np.arange(mesh.n_elements)
    raise ValueError(f"region must be omega or omega_and_gamma, got {region!r}")


def l2_error(space, coeffs, u_exact, region="omega"):
    """L2 norm of u_h - u_exact over the chosen region.

    Quadrature: Gauss-Legendre with degree+2 points per axis on quads and
    hexes, the degree-5 simplex rule on triangles.
    """
    mesh = space.mesh
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise ValueError("coefficient vector length must equal n_dofs")
    ids = _region_ids(mesh, region)
    rules = {}
    tables = {}
    total = 0.0
    for e in ids:
        kind = {0: "quad", 1: "tri", 2: "hex"}[int(mesh.elem_kind[e])]
        if kind not in rules:
            if kind == "tri":
                rules[kind] = quadrature.dunavant7()
            else:
                rules[kind] = quadrature.tensor_product(
                    quadrature.gauss_legendre_1d(space.degree + 2),
                    3 if kind == "hex" else 2)
            tables[kind] = eval_shape_functions(kind, space.degree,
                                                rules[kind].ref_points)
        pts, w = quadrature.map_to_physical(rules[kind], mesh.elements[e])
        dofs = space.dofs_of(e)
        uh = tables[kind] @ coeffs[dofs]
        diff = uh - np.asarray(u_exact(pts), dtype=float)
        total += float(np.dot(w, diff * diff))
    return float(np.sqrt(total))
