"""Bound-preserving conservative transport of the density.

MUSCL reconstruction with the minmod limiter and upwind face fluxes.  The
update is written so that, for a discretely divergence-free velocity,
each new cell value is a convex combination of old neighbouring values
as long as

    dt * (sum_inflow |u_f| / h_f + 1/2 * sum_outflow |u_f| / h_f) <= 1

in every cell.  ``advance_density`` sub-cycles to guarantee this, so the
bounds ``m <= rho <= M`` are a property of the scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundViolation, CFLViolation
from .mac import Grid2D, Velocity, divergence

CFL_MAX = 0.9
DIV_TOL = 1e-8
BOUND_TOL = 4 * np.finfo(float).eps


@dataclass
class DensityField:
    rho: np.ndarray
    m: float
    M: float

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if not 0 < self.m <= self.M:
            raise ValueError("density bounds need 0 < m <= M")

    def mass(self, grid):
        return float(self.rho.sum() * grid.cell_area)

    def check_bounds(self, slack=0.0):
        tol = BOUND_TOL * self.M + slack
        lo, hi = self.rho.min(), self.rho.max()
        if lo < self.m - tol or hi > self.M + tol:
            raise BoundViolation(f"density range [{lo:.17g}, {hi:.17g}] left "
                                 f"[{self.m:g}, {self.M:g}]")

    def enforce_bounds(self, slack=0.0):
        """Check the bounds, then clamp excursions within the tolerance.

        The scheme is bound preserving in exact arithmetic; what remains is
        rounding plus the ``dt * rho * div w`` defect of a velocity that is
        divergence free only to solver tolerance.  Anything larger raises.
        """
        self.check_bounds(slack)
        np.clip(self.rho, self.m, self.M, out=self.rho)
        return self


def bound_slack(grid, w: Velocity, dt, M):
    """Admissible excursion caused by the discrete divergence of ``w``."""
    return 2.0 * dt * M * float(np.abs(divergence(grid, w)).max())


def minmod(a, b):
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _slopes(rho, axis):
    d = np.diff(rho, axis=axis)
    s = np.zeros_like(rho)
    inner = [slice(None)] * 2
    inner[axis] = slice(1, -1)
    lo = [slice(None)] * 2
    lo[axis] = slice(None, -1)
    hi = [slice(None)] * 2
    hi[axis] = slice(1, None)
    s[tuple(inner)] = minmod(d[tuple(lo)], d[tuple(hi)])
    return s


def muscl_fluxes(grid, rho, w: Velocity):
    """Mass fluxes ``rho_face * velocity`` on x- and y-faces (walls zero)."""
    sx = _slopes(rho, 0)
    sy = _slopes(rho, 1)
    fx = np.zeros_like(w.u)
    left = rho[:-1] + 0.5 * sx[:-1]
    right = rho[1:] - 0.5 * sx[1:]
    ui = w.u[1:-1]
    fx[1:-1] = np.where(ui > 0.0, ui * left, ui * right)
    fy = np.zeros_like(w.v)
    below = rho[:, :-1] + 0.5 * sy[:, :-1]
    above = rho[:, 1:] - 0.5 * sy[:, 1:]
    vi = w.v[:, 1:-1]
    fy[:, 1:-1] = np.where(vi > 0.0, vi * below, vi * above)
    return fx, fy


def cfl_number(grid, w: Velocity, dt):
    return dt * max(np.abs(w.u).max() / grid.hx, np.abs(w.v).max() / grid.hy)


def substep_count(grid, w: Velocity, dt):
    """Smallest sub-cycle count satisfying the cellwise convexity condition."""
    u, v = w.u, w.v
    # crossing speeds: inflow and outflow parts at each cell's four faces
    inflow = (np.maximum(u[:-1], 0) + np.maximum(-u[1:], 0)) / grid.hx \
        + (np.maximum(v[:, :-1], 0) + np.maximum(-v[:, 1:], 0)) / grid.hy
    outflow = (np.maximum(-u[:-1], 0) + np.maximum(u[1:], 0)) / grid.hx \
        + (np.maximum(-v[:, :-1], 0) + np.maximum(v[:, 1:], 0)) / grid.hy
    c = dt * np.max(inflow + 0.5 * outflow)
    return max(1, math.ceil(c * (1 + 1e-12)))


def transport_substep(grid, rho, w: Velocity, dt):
    """One MUSCL step; returns the new density and the face mass fluxes."""
    fx, fy = muscl_fluxes(grid, rho, w)
    new = rho - dt * ((fx[1:] - fx[:-1]) / grid.hx + (fy[:, 1:] - fy[:, :-1]) / grid.hy)
    return new, fx, fy


def check_advection_preconditions(grid, w: Velocity, dt):
    cfl = cfl_number(grid, w, dt)
    if cfl > CFL_MAX:
        raise CFLViolation(f"CFL number {cfl:.3f} exceeds {CFL_MAX}")
    div = np.abs(divergence(grid, w)).max()
    if div > DIV_TOL:
        raise CFLViolation(f"advecting velocity has |div|_inf = {div:.2e} > {DIV_TOL:g}")


def advance_density(grid: Grid2D, rho: DensityField, w: Velocity, dt) -> DensityField:
    """Advance ``d rho/dt + div(rho w) = 0`` over ``dt`` with sub-cycling."""
    check_advection_preconditions(grid, w, dt)
    if not (np.any(w.u) or np.any(w.v)):
        return DensityField(rho.rho.copy(), rho.m, rho.M)
    n = substep_count(grid, w, dt)
    r = rho.rho
    for _ in range(n):
        r, _, _ = transport_substep(grid, r, w, dt / n)
    out = DensityField(r, rho.m, rho.M)
    return out.enforce_bounds(bound_slack(grid, w, dt, rho.M))
