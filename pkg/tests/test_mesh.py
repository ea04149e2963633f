"""Mesh construction: counts, regions, measures, refinement, partitions."""

import numpy as np
import pytest

from mollifem.mesh import build_mesh, partition_geometric, refine

OMEGA_2D = ((-0.6, 0.6), (-0.4, 0.4))
OMEGA_3D = ((-0.6, 0.6), (-0.4, 0.4), (-0.4, 0.4))


def test_element_counts_by_construction():
    # 12x8 interior cells, layer 0.2125 -> ceil(2.125) = 3 rings -> 18x14
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="quad")
    assert mesh.gamma_layers == 3
    assert mesh.n_elements == 18 * 14
    assert (mesh.elem_region == 0).sum() == 12 * 8
    tri = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="tri")
    assert tri.n_elements == 2 * 18 * 14
    assert (tri.elem_region == 0).sum() == 2 * 12 * 8
    mixed = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="mixed")
    # checkerboard: half the 252 cells stay quads, half split into 2 tris
    assert mixed.n_elements == 126 + 2 * 126
    hexm = build_mesh(3, OMEGA_3D, 0.2, 0.2125, kind="hex")
    assert hexm.gamma_layers == 2
    assert hexm.n_elements == 10 * 8 * 8
    assert (hexm.elem_region == 0).sum() == 6 * 4 * 4


def test_ring_count_rounding():
    # exact multiples must not gain a spurious ring
    assert build_mesh(2, OMEGA_2D, 0.1, 0.2, kind="quad").gamma_layers == 2
    assert build_mesh(2, OMEGA_2D, 0.1, 0.2000001, kind="quad").gamma_layers == 3
    assert build_mesh(2, OMEGA_2D, 0.1, 0.0, kind="quad").gamma_layers == 0


def test_measures_partition_the_domain():
    for kind in ("quad", "tri", "mixed"):
        mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind=kind)
        vol = np.zeros(mesh.n_elements)
        for i in range(mesh.n_elements):
            ext = mesh.elem_hi[i] - mesh.elem_lo[i]
            vol[i] = ext.prod() * (0.5 if mesh.elem_kind[i] == 1 else 1.0)
        omega = vol[mesh.elem_region == 0].sum()
        assert abs(omega - 1.2 * 0.8) <= 1e-12
        assert abs(vol.sum() - 1.8 * 1.4) <= 1e-12


def test_bad_inputs_raise():
    with pytest.raises(ValueError):
        build_mesh(2, OMEGA_2D, 0.07, 0.2)  # 1.2/0.07 not integral
    with pytest.raises(ValueError):
        build_mesh(2, OMEGA_2D, -0.1, 0.2)
    with pytest.raises(ValueError):
        build_mesh(2, OMEGA_2D, 0.1, 0.2, kind="hex")  # hex is 3D only
    with pytest.raises(ValueError):
        build_mesh(3, OMEGA_3D, 0.2, 0.2, kind="tri")
    with pytest.raises(ValueError):
        build_mesh(2, ((0.0, 1.0),), 0.1, 0.2)


def test_bboxes_and_cells_consistent():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="tri")
    origin = np.asarray(mesh.grid_origin)
    for i in range(mesh.n_elements):
        cell_lo = origin + mesh.elem_cell[i] * mesh.h
        assert np.allclose(mesh.elem_lo[i], cell_lo, atol=1e-12)
        assert np.allclose(mesh.elem_hi[i], cell_lo + mesh.h, atol=1e-12)
        el = mesh.elements[i]
        assert np.allclose(el.bbox.lo, mesh.elem_lo[i], atol=0.0)
        assert np.allclose(el.bbox.hi, mesh.elem_hi[i], atol=0.0)


def test_region_is_geometric():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="quad")
    lo = np.array([-0.6, -0.4])
    hi = np.array([0.6, 0.4])
    for i in range(mesh.n_elements):
        center = 0.5 * (mesh.elem_lo[i] + mesh.elem_hi[i])
        inside = np.all(center > lo) and np.all(center < hi)
        assert (mesh.elem_region[i] == 0) == inside


def test_refine_halves_h():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="quad")
    fine = refine(mesh)
    assert fine.h == pytest.approx(0.05)
    assert fine.gamma_layers == 6
    assert fine.n_elements == 4 * mesh.n_elements
    m3 = build_mesh(3, OMEGA_3D, 0.2, 0.2125, kind="hex")
    f3 = refine(m3)
    assert f3.n_elements == 8 * m3.n_elements


def test_build_is_deterministic():
    a = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="mixed")
    b = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="mixed")
    assert np.array_equal(a.elem_cell, b.elem_cell)
    assert np.array_equal(a.elem_kind, b.elem_kind)
    assert np.array_equal(a.elem_coords, b.elem_coords)


def test_partition_sizes_and_coverage():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="quad")
    for n_parts in (1, 2, 4, 8):
        pm = partition_geometric(mesh, n_parts)
        sizes = [len(pm.owned(p)) for p in range(n_parts)]
        assert sum(sizes) == mesh.n_elements
        assert max(sizes) - min(sizes) <= 1
        covered = np.concatenate([pm.owned(p) for p in range(n_parts)])
        assert np.array_equal(np.sort(covered), np.arange(mesh.n_elements))


def test_partition_bbox_contains_owned_elements():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="tri")
    pm = partition_geometric(mesh, 4)
    for p in range(4):
        box = pm.part_bbox[p]
        ids = pm.owned(p)
        assert len(ids) > 0
        assert np.all(mesh.elem_lo[ids] >= np.asarray(box.lo) - 1e-12)
        assert np.all(mesh.elem_hi[ids] <= np.asarray(box.hi) + 1e-12)


def test_partition_deterministic():
    mesh = build_mesh(2, OMEGA_2D, 0.1, 0.2125, kind="quad")
    a = partition_geometric(mesh, 8)
    b = partition_geometric(mesh, 8)
    assert np.array_equal(a.owner, b.owner)
