"""Stiffness assembly: term identities, strategy agreement, oracles."""

import numpy as np
import pytest

from mollifem.assembly import (
    AssemblyConfig,
    assemble,
    assemble_barycenter,
    assemble_four_terms,
    assemble_reference,
    assemble_reference_dense,
    assemble_rhs,
    neighbor_sets,
)
from mollifem.fe_space import FESpace, interpolate
from mollifem.kernel import KernelParams
from mollifem.mesh import build_mesh

SMALL = ((0.0, 0.2), (0.0, 0.2))  # 2x2 interior cells


def _setup(kind="quad", degree=2, eps=0.0, h=0.1, omega=SMALL, delta=0.2):
    params = KernelParams(2, delta, eps)
    mesh = build_mesh(2, omega, h, delta + eps, kind=kind)
    space = FESpace(mesh, degree)
    return mesh, space, params


def test_four_term_identities_matched_rules():
    """With one shared rule the outer and inner roles are interchangeable.

    eps > 0 keeps quadrature points off the cutoff circle; at eps = 0 with
    delta = 2h whole point pairs land exactly on it and the indicator ties
    make independent accumulation orders legitimately disagree.
    """
    for kind in ("quad", "tri"):
        mesh, space, params = _setup(kind, eps=0.05)
        cfg = AssemblyConfig(L_min=1, L_max=1)
        A11, A12, A21, A22 = assemble_four_terms(mesh, space, params, cfg)
        scale = np.abs(A11).max()
        assert np.abs(A11 - A22).max() <= 1e-12 * scale
        assert np.abs(A12 - A21).max() <= 1e-12 * scale
        # the full operator matches the production accumulation 2(A21 + A22)
        A = assemble(mesh, space, params, cfg)
        assert np.abs(A.toarray() - 2.0 * (A21 + A22)).max() <= 1e-12 * scale


def test_row_sums_vanish_raw():
    # partition of unity cancels A21 against A22 row by row, per event
    for lmax in (1, 3):
        mesh, space, params = _setup("quad", eps=0.05)
        A = assemble(mesh, space, params, AssemblyConfig(L_max=lmax))
        ones = np.ones(space.n_dofs)
        assert np.abs(A @ ones).max() <= 1e-10 * A.norm_inf()


def test_presym_asymmetry_small_at_matched_single_level():
    mesh, space, params = _setup("quad")
    A = assemble(mesh, space, params, AssemblyConfig(L_min=1, L_max=1))
    assert A.presym_asymmetry <= 1e-12 * A.norm_inf()


def test_production_matches_reference_recursion():
    """Compiled per-pair recursion equals the plain python reference."""
    for kind in ("quad", "tri", "mixed"):
        mesh, space, params = _setup(kind, degree=1, eps=0.05)
        cfg = AssemblyConfig(L_min=1, L_max=3)
        A = assemble(mesh, space, params, cfg)
        R, _ = assemble_reference(mesh, space, params, cfg)
        scale = np.abs(R).max()
        assert np.abs(A.toarray() - R).max() <= 1e-12 * scale, kind


def test_general_and_blocked_strategies_agree():
    for kind in ("quad", "tri"):
        mesh, space, params = _setup(kind, degree=2, eps=0.05)
        cfg_g = AssemblyConfig(L_max=2, strategy="general")
        cfg_b = AssemblyConfig(L_max=2, strategy="blocked")
        Ag = assemble(mesh, space, params, cfg_g)
        Ab = assemble(mesh, space, params, cfg_b)
        assert np.abs(Ag.vals - Ab.vals).max() <= 1e-12 * Ag.norm_inf()


def test_blocked_strategy_rejects_mixed():
    mesh, space, params = _setup("mixed")
    with pytest.raises(ValueError):
        assemble(mesh, space, params, AssemblyConfig(strategy="blocked"))


def test_adaptive_against_fine_composite_oracle():
    """Deep adaptive quadrature lands on the independent composite rule."""
    mesh, space, params = _setup("quad", degree=1, eps=0.05)
    A = assemble(mesh, space, params, AssemblyConfig(L_min=1, L_max=4))
    D = assemble_reference_dense(mesh, space, params,
                                 AssemblyConfig(L_min=1, L_max=4))
    scale = np.abs(D).max()
    assert np.abs(A.toarray() - D).max() <= 1e-6 * scale


def test_linear_patch_identity_raw_matrix():
    # the raw matrix annihilates linear interpolants on free rows exactly
    for kind in ("quad", "tri"):
        for degree in (1, 2):
            mesh, space, params = _setup(kind, degree=degree, eps=0.05,
                                         omega=((0.0, 0.4), (0.0, 0.3)))
            A = assemble(mesh, space, params, AssemblyConfig(L_max=2))
            u = interpolate(space, lambda x: 1.0 + 2.0 * x[..., 0] - x[..., 1])
            r = (A @ u)[space.free]
            assert np.abs(r).max() <= 1e-10 * A.norm_inf(), (kind, degree)


def test_symmetrize_is_opt_in():
    mesh, space, params = _setup("quad", degree=2, eps=0.05)
    cfg = AssemblyConfig(L_max=2)
    A = assemble(mesh, space, params, cfg)
    assert A.asymmetry_inf() > 0.0  # raw operator keeps quadrature skew
    cfg_s = AssemblyConfig(L_max=2, symmetrize=True)
    S = assemble(mesh, space, params, cfg_s)
    assert S.asymmetry_inf() <= 1e-14 * S.norm_inf()
    assert S.presym_asymmetry == pytest.approx(A.asymmetry_inf(), rel=1e-12)


def test_support_respects_interaction_radius():
    mesh, space, params = _setup("quad", degree=1, eps=0.0,
                                 omega=((0.0, 0.5), (0.0, 0.3)))
    A = assemble(mesh, space, params)
    dense = A.toarray()
    coords = space.dof_coords
    reach = params.delta + params.eps + 2.0 * mesh.h
    for i in range(0, space.n_dofs, 7):
        far = np.abs(coords - coords[i]).max(axis=1) > reach
        assert np.all(dense[i, far] == 0.0)


def test_event_count_grows_with_depth():
    mesh, space, params = _setup("quad", eps=0.05)
    events = []
    for lmax in (1, 2, 3):
        A = assemble(mesh, space, params, AssemblyConfig(L_max=lmax))
        events.append(A.events)
    assert events[0] < events[1] < events[2]


def test_neighbor_sets_are_symmetric_and_reach_limited():
    mesh, space, params = _setup("tri", eps=0.05)
    sets = neighbor_sets(mesh, params)
    for l in range(mesh.n_elements):
        for m in sets.of(l):
            assert l in sets.of(m)
    # elements farther than delta+eps in box distance never pair
    from mollifem.assembly import aprx_min_dist
    from mollifem.mesh import BoundingBox
    for l in range(0, mesh.n_elements, 5):
        members = set(sets.of(l))
        bl = BoundingBox(mesh.elem_lo[l], mesh.elem_hi[l])
        for m in range(mesh.n_elements):
            bm = BoundingBox(mesh.elem_lo[m], mesh.elem_hi[m])
            if aprx_min_dist(bl, bm) < params.delta + params.eps:
                assert m in members


def test_barycenter_requires_sharp_kernel():
    mesh, space, params = _setup("quad", eps=0.05)
    with pytest.raises(ValueError):
        assemble_barycenter(mesh, space, params)


def test_barycenter_assembles_and_annihilates_constants():
    mesh, space, params = _setup("quad", degree=1, eps=0.0)
    A = assemble(mesh, space, params, AssemblyConfig(method="barycenter"))
    ones = np.ones(space.n_dofs)
    assert np.abs(A @ ones).max() <= 1e-10 * A.norm_inf()
    assert A.nnz > 0


def test_rhs_zero_for_zero_data():
    mesh, space, params = _setup("quad", degree=1)
    A = assemble(mesh, space, params)
    zero = lambda x: np.zeros(x.shape[:-1])
    rhs = assemble_rhs(mesh, space, params, zero, zero, A)
    assert rhs.shape == (space.free.size,)
    assert np.all(rhs == 0.0)


def test_rhs_lifting_term_sign():
    # with f = 0 the rhs reduces to -(A g_ext) on free rows
    mesh, space, params = _setup("quad", degree=1)
    A = assemble(mesh, space, params)
    zero = lambda x: np.zeros(x.shape[:-1])
    g = lambda x: x[..., 0]
    rhs = assemble_rhs(mesh, space, params, zero, g, A)
    from mollifem.fe_space import lifting
    ge = lifting(space, g)
    assert np.allclose(rhs, -(A @ ge)[space.free], atol=1e-14)
