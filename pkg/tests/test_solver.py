"""Preconditioned CG on the volume-constrained system."""

import numpy as np
import pytest

from mollifem.assembly import AssemblyConfig, assemble
from mollifem.fe_space import FESpace, interpolate
from mollifem.kernel import KernelParams
from mollifem.mesh import build_mesh
from mollifem.solver import solve


def _system(kind="quad", degree=1, eps=0.05):
    params = KernelParams(2, 0.2, eps)
    mesh = build_mesh(2, ((0.0, 0.4), (0.0, 0.3)), 0.1, 0.2 + eps, kind=kind)
    space = FESpace(mesh, degree)
    A = assemble(mesh, space, params, AssemblyConfig(L_max=2))
    return mesh, space, params, A


def test_converges_and_residual_is_recomputed():
    mesh, space, params, A = _system()
    rng = np.random.default_rng(42)
    x_true = np.zeros(space.n_dofs)
    x_true[space.free] = rng.standard_normal(space.free.size)
    rhs = (A @ x_true)[space.free]
    g = np.zeros(space.constrained.size)
    u, rep = solve(A, rhs, space.free, space.constrained, g, tol=1e-12)
    assert rep.converged
    assert rep.iterations > 0
    # the reported residual is the true one (relative), not the recurrence
    r = rhs - (A @ u)[space.free]
    bnorm = np.linalg.norm(rhs)
    assert abs(np.linalg.norm(r) / bnorm - rep.final_residual) <= 1e-15
    assert rep.final_residual <= 1e-12
    assert np.abs(u[space.free] - x_true[space.free]).max() <= 1e-8


def test_constrained_values_pass_through():
    mesh, space, params, A = _system(degree=2)
    gfun = lambda x: 1.0 + x[..., 0] + x[..., 1]
    gv = gfun(space.dof_coords[space.constrained])
    u, rep = solve(A, np.zeros(space.free.size), space.free,
                   space.constrained, gv)
    assert np.array_equal(u[space.constrained], gv)
    # full-length g is accepted too and read at the constrained slots
    u2, _ = solve(A, np.zeros(space.free.size), space.free,
                  space.constrained, gfun(space.dof_coords))
    assert np.array_equal(u2[space.constrained], gv)


def test_zero_rhs_zero_constraint_short_circuits():
    mesh, space, params, A = _system()
    u, rep = solve(A, np.zeros(space.free.size), space.free,
                   space.constrained, np.zeros(space.constrained.size))
    assert rep.converged and rep.iterations == 0
    assert np.all(u == 0.0)


def test_patch_solve_is_exact():
    # linear data: the discrete solution reproduces the interpolant
    from mollifem.assembly import assemble_rhs
    for degree in (1, 2):
        mesh, space, params, A = _system(degree=degree)
        ufun = lambda x: 1.0 + 2.0 * x[..., 0] - 3.0 * x[..., 1]
        f = lambda x: np.zeros(x.shape[:-1])
        rhs = assemble_rhs(mesh, space, params, f, ufun, A)
        gv = ufun(space.dof_coords[space.constrained])
        u, rep = solve(A, rhs, space.free, space.constrained, gv)
        assert rep.converged
        exact = interpolate(space, ufun)
        assert np.abs(u - exact).max() <= 1e-9


def test_max_iter_cap_reports_failure():
    mesh, space, params, A = _system()
    rng = np.random.default_rng(3)
    rhs = rng.standard_normal(space.free.size)
    u, rep = solve(A, rhs, space.free, space.constrained,
                   np.zeros(space.constrained.size), max_iter=1)
    assert not rep.converged
    assert rep.iterations == 1


def test_rejects_nonpositive_diagonal():
    mesh, space, params, A = _system()
    B = A.copy_pattern()
    B.vals[:] = 0.0
    with pytest.raises(RuntimeError):
        solve(B, np.ones(space.free.size), space.free, space.constrained,
              np.zeros(space.constrained.size))
