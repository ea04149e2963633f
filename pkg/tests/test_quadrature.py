"""Quadrature exactness, weight sums, and physical mapping."""

import numpy as np
import pytest

from mollifem.mesh import build_mesh
from mollifem.quadrature import (
    dunavant7,
    gauss_legendre_1d,
    gauss_lobatto_1d,
    map_to_physical,
    rule_for_kind,
    tensor_product,
)


def _eval_poly(c, x):
    # c[k] coefficient of x^k
    return sum(ck * x ** k for k, ck in enumerate(c))


def test_gauss_legendre_exactness():
    """n points integrate random polynomials up to degree 2n-1 on [-1,1]."""
    rng = np.random.default_rng(7)
    for n in range(1, 9):
        rule = gauss_legendre_1d(n)
        assert abs(rule.weights.sum() - 2.0) <= 1e-14
        for _ in range(6):
            deg = int(rng.integers(0, 2 * n))
            c = rng.uniform(-1.0, 1.0, size=deg + 1)
            # exact integral of sum c_k x^k over [-1, 1]
            exact = sum(2.0 * ck / (k + 1) for k, ck in enumerate(c)
                        if k % 2 == 0)
            got = float(np.sum(rule.weights
                               * _eval_poly(c, rule.ref_points[:, 0])))
            assert abs(got - exact) <= 1e-12, (n, deg)


def test_gauss_lobatto_nodes_and_exactness():
    rng = np.random.default_rng(8)
    for n in range(2, 7):
        rule = gauss_lobatto_1d(n)
        x = rule.ref_points[:, 0]
        assert x[0] == -1.0 and x[-1] == 1.0
        assert abs(rule.weights.sum() - 2.0) <= 1e-14
        for _ in range(6):
            deg = int(rng.integers(0, 2 * n - 2))
            c = rng.uniform(-1.0, 1.0, size=deg + 1)
            exact = sum(2.0 * ck / (k + 1) for k, ck in enumerate(c)
                        if k % 2 == 0)
            got = float(np.sum(rule.weights * _eval_poly(c, x)))
            assert abs(got - exact) <= 1e-12, (n, deg)


def test_dunavant_weight_sum_and_degree():
    rule = dunavant7()
    assert len(rule) == 7
    assert abs(rule.weights.sum() - 0.5) <= 1e-15
    # integrate all monomials x^a y^b with a+b <= 5 over the unit triangle;
    # exact value is a! b! / (a+b+2)!
    import math
    x, y = rule.ref_points[:, 0], rule.ref_points[:, 1]
    for a in range(6):
        for b in range(6 - a):
            exact = (math.factorial(a) * math.factorial(b)
                     / math.factorial(a + b + 2))
            got = float(np.sum(rule.weights * x ** a * y ** b))
            assert abs(got - exact) <= 1e-14, (a, b)


def test_tensor_product_counts_and_sums():
    base = gauss_legendre_1d(3)
    q2 = tensor_product(base, 2)
    q3 = tensor_product(base, 3)
    assert len(q2) == 9 and q2.domain == "quad"
    assert len(q3) == 27 and q3.domain == "hex"
    assert abs(q2.weights.sum() - 4.0) <= 1e-13
    assert abs(q3.weights.sum() - 8.0) <= 1e-13


def test_rule_for_kind_presets():
    assert len(rule_for_kind("quad")) == 9
    assert len(rule_for_kind("hex", "gauss2")) == 8
    assert len(rule_for_kind("tri", "lobatto4")) == 7  # tri ignores preset
    lob = rule_for_kind("quad", "lobatto3")
    corners = np.abs(lob.ref_points)
    assert np.any(np.all(corners == 1.0, axis=1))  # includes cell corners
    with pytest.raises(ValueError):
        rule_for_kind("quad", "simpson")
    with pytest.raises(ValueError):
        rule_for_kind("pent")


def test_map_to_physical_measures():
    """Mapped weights sum to the element measure for every kind."""
    mesh2 = build_mesh(2, ((0.0, 0.4), (0.0, 0.2)), 0.1, 0.0, kind="mixed")
    mesh3 = build_mesh(3, ((0.0, 0.2), (0.0, 0.2), (0.0, 0.2)), 0.1, 0.0,
                       kind="hex")
    for mesh in (mesh2, mesh3):
        for el in mesh.elements:
            kind = ("tri", "quad", "hex")[
                1 if el.kind == "quad" else (0 if el.kind == "tri" else 2)]
            rule = rule_for_kind(kind)
            x, w = map_to_physical(rule, el)
            vol = 0.1 * 0.1 if mesh.dim == 2 else 0.1 ** 3
            if el.kind == "tri":
                vol *= 0.5
            assert abs(w.sum() - vol) <= 1e-15
            # mapped points stay inside the element bounding box
            lo, hi = el.bbox.lo, el.bbox.hi
            assert np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)


def test_map_to_physical_centroid():
    # linear map: integrating x over the element gives measure * centroid
    mesh = build_mesh(2, ((0.0, 0.2), (0.0, 0.2)), 0.1, 0.0, kind="quad")
    el = mesh.elements[0]
    rule = rule_for_kind("quad")
    x, w = map_to_physical(rule, el)
    centroid = (x * w[:, None]).sum(axis=0) / w.sum()
    assert np.allclose(centroid, 0.5 * (el.bbox.lo + el.bbox.hi), atol=1e-14)
