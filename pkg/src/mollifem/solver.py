"""Conjugate gradient solve of the constrained system.

The stiffness matrix lives on all DOFs; the solve runs on the free block
without extracting it. Vectors stay full length with constrained entries
pinned to zero, the matvec is the full one followed by masking, and
Jacobi preconditioning uses the inverse free diagonal.
"""

import numpy as np


class SolveReport:
    """Iteration count, recomputed relative residual, convergence flag."""

    def __init__(self, iterations, final_residual, converged):
        self.iterations = iterations
        self.final_residual = final_residual
        self.converged = converged

    def __repr__(self):
        return (f"SolveReport(iterations={self.iterations}, "
                f"final_residual={self.final_residual:.3e}, "
                f"converged={self.converged})")


def solve(A, rhs, free, constrained, g_values, tol=1e-12, max_iter=None):
    """Solve A_ff w_f = rhs with u = w + lifting, via preconditioned CG.

    rhs is given over the free DOFs. g_values holds the constrained nodal
    values (full-length array or values in constrained order). Returns
    (u, report) where u is full length with u[constrained] = g values.
    Raises RuntimeError if the operator shows nonpositive curvature.
    """
    n = A.n
    free = np.asarray(free)
    constrained = np.asarray(constrained)
    if max_iter is None:
        max_iter = 10 * n
    b = np.zeros(n)
    b[free] = rhs

    d = A.diag()
    dinv = np.zeros(n)
    df = d[free]
    if np.any(df <= 0.0):
        raise RuntimeError("free diagonal of A is not positive")
    dinv[free] = 1.0 / df

    def masked_matvec(p):
        y = A.matvec(p)
        y[constrained] = 0.0
        return y

    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    converged = False
    it = 0
    if bnorm == 0.0:
        converged = True
    else:
        r = b.copy()
        z = dinv * r
        p = z.copy()
        rz = r @ z
        for it in range(1, max_iter + 1):
            Ap = masked_matvec(p)
            pAp = p @ Ap
            if pAp <= 0.0:
                raise RuntimeError(
                    f"nonpositive curvature p^T A p = {pAp:.3e}; "
                    "matrix is not SPD on the free block")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if np.linalg.norm(r) <= tol * bnorm:
                # accept only if the true residual agrees (recurrence drift)
                r = b - masked_matvec(x)
                if np.linalg.norm(r) <= tol * bnorm:
                    converged = True
                    break
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
    final = (np.linalg.norm(b - masked_matvec(x)) / bnorm
             if bnorm > 0.0 else 0.0)
    u = x
    g = np.asarray(g_values, dtype=float)
    u[constrained] = g[constrained] if g.shape == (n,) else g
    return u, SolveReport(it if bnorm > 0.0 else 0, final, converged)
