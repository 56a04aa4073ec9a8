"""Preconditioned conjugate gradients for matrix-free SPD operators."""
from dataclasses import dataclass

import numpy as np

from .errors import SolverDiverged


@dataclass
class CGInfo:
    iterations: int
    residual: float  # relative 2-norm residual at exit


def pcg(apply_a, b, precond=None, x0=None, rtol=1e-10, maxiter=1000,
        project=None, error=SolverDiverged):
    """Solve ``A x = b`` for a symmetric positive (semi-)definite ``A``.

    ``project`` is applied to the residual and the iterate every iteration;
    it is how null spaces (constants on a periodic or Neumann grid) are
    removed.  Raises ``error`` if ``maxiter`` is exhausted.
    """
    if project is None:
        def project(z):
            return z
    if precond is None:
        def precond(z):
            return z
    b = project(b)
    bnorm = np.sqrt(np.vdot(b, b).real)
    if x0 is None:
        x = np.zeros_like(b)
    else:
        x = project(x0.copy())
    if bnorm == 0.0:
        return np.zeros_like(b), CGInfo(0, 0.0)
    r = project(b - apply_a(x))
    rnorm = np.sqrt(np.vdot(r, r).real)
    if rnorm <= rtol * bnorm:
        return x, CGInfo(0, rnorm / bnorm)
    z = project(precond(r))
    p = z.copy()
    rz = np.vdot(r, z).real
    for it in range(1, maxiter + 1):
        ap = apply_a(p)
        pap = np.vdot(p, ap).real
        if pap <= 0.0:
            raise error(f"operator not positive definite (p.Ap={pap:.3e})")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        r = project(r)
        rnorm = np.sqrt(np.vdot(r, r).real)
        if rnorm <= rtol * bnorm:
            return project(x), CGInfo(it, rnorm / bnorm)
        z = project(precond(r))
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise error(f"CG did not reach rtol={rtol:g} in {maxiter} iterations "
                f"(residual {rnorm / bnorm:.3e})")
