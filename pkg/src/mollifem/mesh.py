"""Structured meshes of a box domain and its surrounding constraint layer.

The solution domain Omega is a box tiled by square/cubic cells of pitch h.
The constraint layer Gamma is a whole number of full cell rings around
Omega, wide enough to cover the kernel support radius. Cells are either
kept as quads/hexes, split into two triangles along the SW-NE diagonal, or
alternated quad/triangle-pair in a checkerboard (mixed).
"""

import math

import numpy as np

__all__ = [
    "BoundingBox",
    "Element",
    "Mesh",
    "PartitionMap",
    "build_mesh",
    "refine",
    "partition_geometric",
]

_KIND_CODE = {"quad": 0, "tri": 1, "hex": 2}


class BoundingBox:
    """Axis-aligned box given by lo/hi corner vectors."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi componentwise")

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, point, tol=0.0):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def __repr__(self):
        return f"BoundingBox({self.lo.tolist()}, {self.hi.tolist()})"


class Element:
    """Single mesh element; geometry nodes only (FE nodes live in FESpace)."""

    __slots__ = ("id", "kind", "node_ids", "region", "bbox", "coords")

    def __init__(self, eid, kind, node_ids, region, coords):
        self.id = eid
        self.kind = kind
        self.node_ids = node_ids
        self.region = region
        self.coords = coords
        self.bbox = BoundingBox(coords.min(axis=0), coords.max(axis=0))

    def measure(self):
        if self.kind == "tri":
            v0, v1, v2 = self.coords[:3]
            a, b = v1 - v0, v2 - v0
            return 0.5 * abs(a[0] * b[1] - a[1] * b[0])
        side = self.bbox.hi - self.bbox.lo
        return float(np.prod(side))

    def __repr__(self):
        return f"Element({self.id}, {self.kind}, {self.region})"


class Mesh:
    """Structured mesh of Omega and its Gamma layer.

    h is the grid pitch (cell edge length). gamma_layers counts the full
    cell rings of the layer. Beyond the Element list, flat arrays mirror
    the element data for the compiled assembly kernels:

      elem_kind    (n,)          0 quad, 1 tri, 2 hex
      elem_proto   (n,)          0, or 1 for the upper triangle of a cell
      elem_region  (n,)          0 omega, 1 gamma
      elem_cell    (n, dim)      global grid cell index per axis
      elem_coords  (n, nv, dim)  geometry node coordinates (tri rows padded)
      elem_lo/hi   (n, dim)      bounding boxes
    """

    def __init__(self, dim, nodes, elements, h, omega_bounds, gamma_layers,
                 kind, layer_width, grid_ncells, grid_origin, arrays):
        self.dim = dim
        self.nodes = nodes
        self.elements = elements
        self.h = h
        self.omega_bounds = omega_bounds
        self.gamma_layers = gamma_layers
        self.kind = kind
        self.layer_width = layer_width
        self.grid_ncells = grid_ncells
        self.grid_origin = grid_origin
        (self.elem_kind, self.elem_proto, self.elem_region,
         self.elem_cell, self.elem_coords, self.elem_lo, self.elem_hi) = arrays

    @property
    def n_elements(self):
        return len(self.elements)

    def omega_element_ids(self):
        return np.nonzero(self.elem_region == 0)[0]

    def domain_bounds(self):
        """Bounding box of Omega union Gamma."""
        lo = np.asarray(self.grid_origin)
        hi = lo + np.asarray(self.grid_ncells) * self.h
        return BoundingBox(lo, hi)

    def __repr__(self):
        return (
            f"Mesh(dim={self.dim}, kind={self.kind}, h={self.h}, "
            f"elements={self.n_elements}, rings={self.gamma_layers})"
        )


class PartitionMap:
    """Element ownership map from recursive coordinate bisection."""

    def __init__(self, n_parts, owner, part_bbox):
        self.n_parts = n_parts
        self.owner = owner
        self.part_bbox = part_bbox

    def owned(self, part):
        return np.nonzero(self.owner == part)[0]

    def __repr__(self):
        return f"PartitionMap(n_parts={self.n_parts})"


def _as_bounds(omega_bounds, dim):
    if isinstance(omega_bounds, BoundingBox):
        lo, hi = omega_bounds.lo, omega_bounds.hi
    else:
        arr = np.asarray(omega_bounds, dtype=float)
        if arr.shape != (dim, 2):
            raise ValueError(f"omega_bounds must be {dim} (lo, hi) pairs")
        lo, hi = arr[:, 0], arr[:, 1]
    if len(lo) != dim:
        raise ValueError("omega_bounds dimension mismatch")
    return BoundingBox(lo, hi)


def build_mesh(dim, omega_bounds, h, layer_width, kind="quad"):
    """Tile Omega with cells of pitch h plus ceil(layer_width/h) gamma rings.

    Side lengths of Omega must be integer multiples of h (within rounding),
    otherwise a ValueError is raised. kind is one of quad, tri, mixed (2D)
    or hex (3D).
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    if layer_width < 0.0:
        raise ValueError("layer_width must be nonnegative")
    rings = int(math.ceil(layer_width / h - 1e-9)) if layer_width > 0.0 else 0
    return _build(dim, omega_bounds, h, rings, kind, layer_width)


def _build(dim, omega_bounds, h, rings, kind, layer_width):
    if dim == 2 and kind not in ("quad", "tri", "mixed"):
        raise ValueError(f"2D mesh kind must be quad/tri/mixed, got {kind!r}")
    if dim == 3 and kind != "hex":
        raise ValueError("3D meshes are hex only")
    box = _as_bounds(omega_bounds, dim)
    side = box.hi - box.lo
    n_omega = np.rint(side / h).astype(int)
    if np.any(n_omega < 1) or np.any(np.abs(n_omega * h - side) > 1e-9 * np.maximum(1.0, side)):
        raise ValueError(
            f"omega side lengths {side.tolist()} are not integer multiples of h={h}"
        )
    nc = n_omega + 2 * rings
    origin = box.lo - rings * h

    # vertex grid, x fastest
    nv = nc + 1
    axes = [origin[k] + h * np.arange(nv[k]) for k in range(dim)]
    if dim == 2:
        Y, X = np.meshgrid(axes[1], axes[0], indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
    else:
        Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def node_id(ix, iy, iz=0):
        if dim == 2:
            return iy * nv[0] + ix
        return (iz * nv[1] + iy) * nv[0] + ix

    elements = []
    kind_arr = []
    proto_arr = []
    region_arr = []
    cell_arr = []
    coords_list = []

    def cell_region(c):
        inside = all(rings <= c[k] < rings + n_omega[k] for k in range(dim))
        return "omega" if inside else "gamma"

    if dim == 3:
        cells = [(cx, cy, cz) for cz in range(nc[2]) for cy in range(nc[1]) for cx in range(nc[0])]
        for c in cells:
            cx, cy, cz = c
            # corner v carries offsets in its bits, x fastest
            ids = np.array([node_id(cx + (v & 1), cy + ((v >> 1) & 1), cz + ((v >> 2) & 1))
                            for v in range(8)])
            reg = cell_region(c)
            coords = nodes[ids]
            elements.append(Element(len(elements), "hex", ids, reg, coords))
            kind_arr.append(_KIND_CODE["hex"])
            proto_arr.append(0)
            region_arr.append(0 if reg == "omega" else 1)
            cell_arr.append(c)
            coords_list.append(coords)
    else:
        for cy in range(nc[1]):
            for cx in range(nc[0]):
                c = (cx, cy)
                reg = cell_region(c)
                regc = 0 if reg == "omega" else 1
                sw = node_id(cx, cy)
                se = node_id(cx + 1, cy)
                nw = node_id(cx, cy + 1)
                ne = node_id(cx + 1, cy + 1)
                as_quad = kind == "quad" or (kind == "mixed" and (cx + cy) % 2 == 0)
                if as_quad:
                    ids = np.array([sw, se, nw, ne])  # bit-lex corner order
                    coords = nodes[ids]
                    elements.append(Element(len(elements), "quad", ids, reg, coords))
                    kind_arr.append(_KIND_CODE["quad"])
                    proto_arr.append(0)
                    region_arr.append(regc)
                    cell_arr.append(c)
                    coords_list.append(coords)
                else:
                    for proto, ids in ((0, (sw, se, ne)), (1, (sw, ne, nw))):
                        ids = np.array(ids)
                        coords = nodes[ids]
                        elements.append(Element(len(elements), "tri", ids, reg, coords))
                        kind_arr.append(_KIND_CODE["tri"])
                        proto_arr.append(proto)
                        region_arr.append(regc)
                        cell_arr.append(c)
                        coords_list.append(coords)

    n_elem = len(elements)
    nv_max = max(c.shape[0] for c in coords_list)
    elem_coords = np.zeros((n_elem, nv_max, dim))
    for i, c in enumerate(coords_list):
        elem_coords[i, : c.shape[0]] = c
    elem_lo = np.empty((n_elem, dim))
    elem_hi = np.empty((n_elem, dim))
    for i, c in enumerate(coords_list):
        elem_lo[i] = c.min(axis=0)
        elem_hi[i] = c.max(axis=0)
    arrays = (
        np.array(kind_arr, dtype=np.int8),
        np.array(proto_arr, dtype=np.int8),
        np.array(region_arr, dtype=np.int8),
        np.array(cell_arr, dtype=np.int32),
        elem_coords,
        elem_lo,
        elem_hi,
    )
    return Mesh(dim, nodes, elements, h, box, rings, kind, layer_width,
                tuple(int(x) for x in nc), origin, arrays)


def refine(mesh):
    """Uniform refinement: h halves, ring count doubles (width preserved)."""
    return _build(mesh.dim, mesh.omega_bounds, mesh.h / 2.0,
                  mesh.gamma_layers * 2, mesh.kind, mesh.layer_width)


def partition_geometric(mesh, n_parts):
    """Recursive coordinate bisection of element centroids.

    Splits along the widest axis of the current subset's centroid cloud at
    the median, recursively, assigning proportional element counts. For
    power-of-two n_parts the part sizes differ by at most one. Deterministic
    for fixed input.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    n_elem = mesh.n_elements
    if n_parts > n_elem:
        raise ValueError("n_parts exceeds element count")
    centroids = 0.5 * (mesh.elem_lo + mesh.elem_hi)
    owner = np.empty(n_elem, dtype=np.int32)

    def recurse(ids, parts, first_label):
        if parts == 1:
            owner[ids] = first_label
            return
        n1 = (parts + 1) // 2
        count1 = (len(ids) * n1) // parts
        sub = centroids[ids]
        extent = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(extent))
        order = np.argsort(sub[:, axis], kind="stable")
        recurse(ids[order[:count1]], n1, first_label)
        recurse(ids[order[count1:]], parts - n1, first_label + n1)

    recurse(np.arange(n_elem), n_parts, 0)
    part_bbox = []
    for p in range(n_parts):
        ids = np.nonzero(owner == p)[0]
        part_bbox.append(BoundingBox(mesh.elem_lo[ids].min(axis=0),
                                     mesh.elem_hi[ids].max(axis=0)))
    return PartitionMap(n_parts, owner, part_bbox)
