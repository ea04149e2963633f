"""Reference-element quadrature rules and physical mapping.

Ships Gauss-Legendre tensor rules, Gauss-Lobatto tensor rules, and the
7-point Dunavant rule on the reference triangle {x, y >= 0, x + y <= 1}.
Reference cells: [-1, 1]^n for quads/hexes, the unit right triangle for
triangles.
"""

import math

import numpy as np
from numpy.polynomial import legendre as npleg

__all__ = [
    "QuadratureRule",
    "gauss_legendre_1d",
    "gauss_lobatto_1d",
    "dunavant7",
    "tensor_product",
    "rule_for_kind",
    "map_to_physical",
]


class QuadratureRule:
    """Immutable point/weight set on a reference domain.

    domain is one of "interval", "quad", "tri", "hex". Weights sum to the
    reference measure (2, 4, 1/2, 8 respectively).
    """

    def __init__(self, ref_points, weights, exact_degree, domain):
        pts = np.atleast_1d(np.asarray(ref_points, dtype=float))
        if pts.ndim == 1:
            pts = pts[:, None]
        self.ref_points = pts
        self.weights = np.asarray(weights, dtype=float)
        if len(self.weights) != len(self.ref_points):
            raise ValueError("points/weights length mismatch")
        self.exact_degree = int(exact_degree)
        self.domain = domain
        self.ref_points.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return (
            f"QuadratureRule({self.domain}, n={len(self)}, "
            f"degree={self.exact_degree})"
        )


def gauss_legendre_1d(n):
    """n-point Gauss-Legendre rule on [-1, 1], exact to degree 2n-1."""
    if not 1 <= n <= 10:
        raise ValueError("gauss_legendre_1d supports n in 1..10")
    x, w = npleg.leggauss(n)
    return QuadratureRule(x, w, 2 * n - 1, "interval")


def gauss_lobatto_1d(n):
    """n-point Gauss-Lobatto rule on [-1, 1] with endpoints, exact to 2n-3.

    Interior nodes are the roots of P'_{n-1}; the weight at node x is
    2 / (n (n-1) P_{n-1}(x)^2).
    """
    if not 2 <= n <= 6:
        raise ValueError("gauss_lobatto_1d supports n in 2..6")
    # coefficient vector of P_{n-1} in the Legendre basis
    cP = np.zeros(n)
    cP[n - 1] = 1.0
    if n == 2:
        interior = np.empty(0)
    else:
        interior = np.sort(npleg.legroots(npleg.legder(cP)))
    x = np.concatenate(([-1.0], interior, [1.0]))
    Pvals = npleg.legval(x, cP)
    w = 2.0 / (n * (n - 1) * Pvals**2)
    return QuadratureRule(x, w, 2 * n - 3, "interval")


def dunavant7():
    """7-point degree-5 rule on the reference triangle; weights sum to 1/2."""
    s15 = math.sqrt(15.0)
    b1 = (6.0 + s15) / 21.0   # barycentric pair for the interior orbit
    a1 = 1.0 - 2.0 * b1
    b2 = (6.0 - s15) / 21.0
    a2 = 1.0 - 2.0 * b2
    w1 = (155.0 + s15) / 2400.0
    w2 = (155.0 - s15) / 2400.0
    pts = []
    wts = []
    pts.append((1.0 / 3.0, 1.0 / 3.0))
    wts.append(9.0 / 80.0)
    for (a, b, w) in ((a1, b1, w1), (a2, b2, w2)):
        pts.extend([(a, b), (b, a), (b, b)])
        wts.extend([w, w, w])
    return QuadratureRule(np.array(pts), np.array(wts), 5, "tri")


def tensor_product(rule1d, dim):
    """Tensor product of a 1D rule over [-1, 1]^dim (dim 2 or 3)."""
    if rule1d.domain != "interval":
        raise ValueError("tensor_product needs a 1D rule")
    x = rule1d.ref_points[:, 0]
    w = rule1d.weights
    if dim == 2:
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return QuadratureRule(pts, W.ravel(), rule1d.exact_degree, "quad")
    if dim == 3:
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        return QuadratureRule(pts, W, rule1d.exact_degree, "hex")
    raise ValueError("dim must be 2 or 3")


# named presets used by the assembly configuration; triangles always get the
# Dunavant rule since it is the only shipped simplex rule
_PRESETS = {"default": ("gauss", 3)}
for _n in range(1, 11):
    _PRESETS[f"gauss{_n}"] = ("gauss", _n)
for _n in range(2, 7):
    _PRESETS[f"lobatto{_n}"] = ("lobatto", _n)


def rule_for_kind(kind, preset="default"):
    """Quadrature rule for an element kind under a named preset.

    Presets: "default" (Gauss-Legendre 3 per axis), "gaussN" (N in 1..10),
    "lobattoN" (N in 2..6). Triangles map to dunavant7 for every preset.
    """
    try:
        family, n = _PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown quadrature preset {preset!r}") from None
    if kind == "tri":
        return dunavant7()
    base = gauss_legendre_1d(n) if family == "gauss" else gauss_lobatto_1d(n)
    if kind == "quad":
        return tensor_product(base, 2)
    if kind == "hex":
        return tensor_product(base, 3)
    raise ValueError(f"unknown element kind {kind!r}")


def _geo_shape_1d(t):
    return np.array([0.5 * (1.0 - t), 0.5 * (1.0 + t)])


def _geo_shape_1d_deriv():
    return np.array([-0.5, 0.5])


def map_to_physical(rule, element):
    """Map a reference rule onto a physical element.

    Returns (points, weights) where weights carry the Jacobian determinant,
    evaluated pointwise for multilinear quads/hexes and once for affine
    triangles. Raises on a degenerate (non-positive Jacobian) element.
    """
    coords = element.coords
    kind = element.kind
    pts = rule.ref_points
    n = len(pts)
    if kind == "tri":
        if rule.domain != "tri":
            raise ValueError("rule/element mismatch")
        v0, v1, v2 = coords[0], coords[1], coords[2]
        J = np.column_stack([v1 - v0, v2 - v0])
        det = np.linalg.det(J)
        if det <= 0.0:
            raise ValueError("degenerate triangle")
        phys = v0[None, :] + pts @ J.T
        # ref weights sum to 1/2, physical area is det/2
        return phys, rule.weights * det
    if kind == "quad":
        if rule.domain != "quad":
            raise ValueError("rule/element mismatch")
        dim = 2
    elif kind == "hex":
        if rule.domain != "hex":
            raise ValueError("rule/element mismatch")
        dim = 3
    else:
        raise ValueError(f"unknown element kind {kind!r}")
    # multilinear tensor map with lexicographic corner ordering
    phys = np.empty((n, dim))
    wts = np.empty(n)
    nv = coords.shape[0]
    for q in range(n):
        t = pts[q]
        shp = np.ones(nv)
        dshp = np.ones((nv, dim))
        for ax in range(dim):
            l = _geo_shape_1d(t[ax])
            dl = _geo_shape_1d_deriv()
            for v in range(nv):
                bit = (v >> ax) & 1
                shp[v] *= l[bit]
                for ax2 in range(dim):
                    dshp[v, ax2] *= dl[bit] if ax2 == ax else l[bit]
        phys[q] = shp @ coords
        J = coords.T @ dshp
        det = np.linalg.det(J)
        if det <= 0.0:
            raise ValueError("degenerate element")
        wts[q] = rule.weights[q] * det
    return phys, wts
