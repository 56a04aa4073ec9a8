"""Semi-implicit Euler-Maruyama solver for the stochastic variable-density
incompressible Navier-Stokes system on the MAC grid.

One step, from ``(rho^n, u^n)``:

1. density and momentum advection with shared face mass fluxes (MUSCL
   minmod for rho, donor-cell for rho u, sub-cycled to stay convex);
2. explicit force ``f(x/eps, t^n/eps, u^n)`` (or ``f_bar(u^n)``) and the
   projected noise increment ``P sum_k sqrt(lambda_k) g_k(u^n) dW_k``;
3. implicit diffusion ``(rho^{n+1}/dt + A) u* = rho^{n+1} u_hat/dt + f + N/dt``
   with ``A = -div(a(x/eps, t^n/eps) grad)`` or the homogenized constant;
4. density-weighted Leray projection of ``u*``.

Every stage is non-expansive in the density-weighted energy when f = g = 0,
so the discrete kinetic energy never grows in that case.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .cell.coefficients import CellCoefficient
from .cell.forcing import AveragedForce, ForceField
from .cell.homogenizer import EffectiveTensor
from .errors import (CFLViolation, DiffusionSolveDiverged, InvariantViolation,
                     ResolutionViolation, UnsupportedCoefficient)
from .mac import (FaceCoefficients, Grid2D, HelmholtzSolver, Velocity, diffusion_energy,
                  divergence, face_density, leray_project, u_at_v, v_at_u, weighted_energy,
                  weighted_project)
from .noise import GOperator, NoisePath, NoiseSpec, apply_noise, zero_path
from .transport import (CFL_MAX, DensityField, bound_slack, cfl_number, substep_count,
                        transport_substep)

DIV_TOL = 1e-8
MIN_EPS_OVER_H = 8.0


@dataclass
class SolverConfig:
    """Everything one run needs.  ``eps=None`` selects the homogenized system,
    in which case ``coefficient`` must be an :class:`EffectiveTensor` and
    ``force`` (if any) an :class:`AveragedForce`."""

    grid: Grid2D
    dt: float
    n_steps: int
    coefficient: CellCoefficient | EffectiveTensor
    eps: float | None = None
    force: ForceField | AveragedForce | None = None
    noise: NoiseSpec | None = None
    g: GOperator | None = None
    diffusion_rtol: float = 1e-10
    advection: bool = True
    body_force: object = None  # callable (x, y, t) -> (fx, fy); manufactured tests
    snapshot_stride: int = 0

    @property
    def homogenized(self):
        return self.eps is None

    @property
    def T(self):
        return self.dt * self.n_steps

    def validate(self):
        if self.dt <= 0 or self.n_steps < 0:
            raise ValueError("need dt > 0 and n_steps >= 0")
        if self.homogenized:
            if not isinstance(self.coefficient, EffectiveTensor):
                raise TypeError("homogenized runs need an EffectiveTensor")
            if self.force is not None and isinstance(self.force, ForceField):
                raise TypeError("homogenized runs need an AveragedForce")
        else:
            if not isinstance(self.coefficient, CellCoefficient):
                raise TypeError("oscillating runs need a CellCoefficient")
            if not 0 < self.eps <= 1:
                raise ValueError("eps must lie in (0, 1]")
            ratio = self.eps / self.grid.h
            if ratio < MIN_EPS_OVER_H * (1 - 1e-12):
                raise ResolutionViolation(
                    f"eps/h = {ratio:.3g} < {MIN_EPS_OVER_H:g}; refine the grid or raise eps")
            if self.dt > self.eps / 8 * (1 + 1e-12):
                raise ResolutionViolation(f"dt = {self.dt:g} exceeds eps/8 = {self.eps / 8:g}")
        if self.noise is not None and self.g is None:
            raise ValueError("a noise spec needs a g operator")
        return self


@dataclass
class FlowState:
    rho: DensityField
    u: Velocity
    pi: np.ndarray
    t: float = 0.0

    @property
    def momentum(self):
        rf = face_density(self.rho.rho)
        return Velocity(rf.u * self.u.u, rf.v * self.u.v)

    def kinetic_energy(self, grid):
        return weighted_energy(grid, face_density(self.rho.rho), self.u)


@dataclass
class EnergyReport:
    """Per-step energy bookkeeping.

    ``ke`` has ``n_steps + 1`` entries (initial state included); the other
    arrays hold per-step increments: ``dissipation = dt <A u*, u*>``,
    ``force_work = dt <f, u*>``, ``noise_work = <N, u^n>`` and
    ``ito = dt sum_k lambda_k |P g_k(u^n)|^2_{1/rho}``.
    """

    time: list = field(default_factory=list)
    ke: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    force_work: list = field(default_factory=list)
    noise_work: list = field(default_factory=list)
    ito: list = field(default_factory=list)

    def arrays(self):
        return {k: np.asarray(getattr(self, k), dtype=float) for k in
                ("time", "ke", "dissipation", "force_work", "noise_work", "ito")}

    def residual(self):
        return energy_residual(self)

    def to_csv(self, path):
        a = self.arrays()
        res = self.residual()
        cum = {k: np.concatenate([[0.0], np.cumsum(a[k])])
               for k in ("dissipation", "force_work", "noise_work", "ito")}
        res = np.concatenate([[0.0], res])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time", "KE", "dissipation", "force_work", "noise_work",
                        "ito", "residual"])
            for n in range(len(a["ke"])):
                w.writerow([n] + [repr(float(x)) for x in (
                    a["time"][n], a["ke"][n], cum["dissipation"][n], cum["force_work"][n],
                    cum["noise_work"][n], cum["ito"][n], res[n])])


def energy_residual(report: EnergyReport):
    """Per-step residual of the discrete Ito energy balance."""
    a = report.arrays()
    if a["ke"].size < 2:
        return np.zeros(0)
    return (np.diff(a["ke"]) + 2 * a["dissipation"] - 2 * a["force_work"] - a["ito"]
            - 2 * a["noise_work"])


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # FlowState copies
    final: FlowState | None = None


def _face_mask_u(u):
    u[0] = u[-1] = 0.0
    return u


class NSSolver:
    """Owns the per-run caches (coefficients, preconditioners, modes)."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg.validate()
        grid = cfg.grid
        self.grid = grid
        self.helmholtz = HelmholtzSolver(grid, rtol=cfg.diffusion_rtol, maxiter=2000,
                                         error=DiffusionSolveDiverged)
        self._static_coeff = None
        if cfg.homogenized:
            ab = cfg.coefficient.a_bar
            if abs(ab[0, 1]) > 1e-12 * np.abs(ab).max():
                raise UnsupportedCoefficient("flow solver supports diagonal effective tensors")
            self._static_coeff = FaceCoefficients.constant(grid, ab[0, 0], ab[1, 1])
        else:
            self._xc, self._yc = grid.centers()
            if not cfg.coefficient.time_dependent:
                self._static_coeff = self._sample_coefficient(0.0)
        self._xu, self._yu = grid.u_points()
        self._xv, self._yv = grid.v_points()
        self.g = cfg.g
        if cfg.noise is not None:
            self.g.bind(grid, cfg.noise)

    # -- coefficient and forcing samples ---------------------------------

    def _sample_coefficient(self, t):
        eps = self.cfg.eps
        a11, a12, a22 = self.cfg.coefficient.evaluate(self._xc / eps, self._yc / eps, t / eps)
        if np.any(a12 != 0.0):
            raise UnsupportedCoefficient("flow solver needs a12 = 0 in the oscillating field")
        return FaceCoefficients.from_cells(a11, a22)

    def coefficients(self, t):
        if self._static_coeff is not None:
            return self._static_coeff
        return self._sample_coefficient(t)

    def forcing(self, w: Velocity, t):
        cfg = self.cfg
        out = Velocity.zeros(self.grid)
        f = cfg.force
        if f is not None and not f.is_zero:
            xi_u = np.stack([w.u, v_at_u(self.grid, w)], axis=-1)
            xi_v = np.stack([u_at_v(self.grid, w), w.v], axis=-1)
            if cfg.homogenized:
                out.u = f(xi_u)[..., 0]
                out.v = f(xi_v)[..., 1]
            else:
                e = cfg.eps
                out.u = f(self._xu / e, self._yu / e, t / e, xi_u)[..., 0]
                out.v = f(self._xv / e, self._yv / e, t / e, xi_v)[..., 1]
        if cfg.body_force is not None:
            out.u = out.u + cfg.body_force(self._xu, self._yu, t)[0]
            out.v = out.v + cfg.body_force(self._xv, self._yv, t)[1]
        return out.enforce_walls()

    # -- advection ---------------------------------------------------------

    def _advect(self, rho, w: Velocity):
        """Return ``(rho^{n+1}, u_hat)`` with ``rho^{n+1} u_hat`` the advected
        momentum; mass and momentum use the same face fluxes."""
        grid, dt = self.grid, self.cfg.dt
        cfl = cfl_number(grid, w, dt)
        if cfl > CFL_MAX:
            raise CFLViolation(f"CFL number {cfl:.3f} exceeds {CFL_MAX}")
        if not (np.any(w.u) or np.any(w.v)):
            return rho.copy(), w.copy()
        ratio = rho.max() / rho.min()
        c_mom = dt * ratio * (2 * np.abs(w.u).max() / grid.hx + 2 * np.abs(w.v).max() / grid.hy)
        n_sub = max(substep_count(grid, w, dt), math.ceil(c_mom * (1 + 1e-12)))
        ds = dt / n_sub
        rf = face_density(rho)
        mu, mv = rf.u * w.u, rf.v * w.v
        uh = w.copy()
        hx, hy = grid.hx, grid.hy
        for _ in range(n_sub):
            rho_new, fx, fy = transport_substep(grid, rho, w, ds)
            # u-momentum: control volumes centred on interior x-faces
            fc = 0.5 * (fx[:-1] + fx[1:])
            xflux = fc * np.where(fc > 0, uh.u[:-1], uh.u[1:])
            gc = 0.5 * (fy[:-1] + fy[1:])
            yflux = np.zeros_like(gc)
            yflux[:, 1:-1] = gc[:, 1:-1] * np.where(gc[:, 1:-1] > 0, uh.u[1:-1, :-1],
                                                    uh.u[1:-1, 1:])
            mu[1:-1] -= ds * ((xflux[1:] - xflux[:-1]) / hx + (yflux[:, 1:] - yflux[:, :-1]) / hy)
            # v-momentum: control volumes centred on interior y-faces
            gv = 0.5 * (fy[:, :-1] + fy[:, 1:])
            yfl = gv * np.where(gv > 0, uh.v[:, :-1], uh.v[:, 1:])
            fv = 0.5 * (fx[:, :-1] + fx[:, 1:])
            xfl = np.zeros_like(fv)
            xfl[1:-1] = fv[1:-1] * np.where(fv[1:-1] > 0, uh.v[:-1, 1:-1], uh.v[1:, 1:-1])
            mv[:, 1:-1] -= ds * ((yfl[:, 1:] - yfl[:, :-1]) / hy + (xfl[1:] - xfl[:-1]) / hx)
            rho = rho_new
            rf = face_density(rho)
            uh = Velocity(mu / rf.u, mv / rf.v).enforce_walls()
        return rho, uh

    # -- one step ------------------------------------------------------------

    def step(self, state: FlowState, dW=None, report: EnergyReport | None = None):
        cfg, grid, dt = self.cfg, self.grid, self.cfg.dt
        un = state.u
        if cfg.advection:
            rho_new, uh = self._advect(state.rho.rho, un)
            dens = DensityField(rho_new, state.rho.m, state.rho.M)
            dens.enforce_bounds(bound_slack(grid, un, dt, state.rho.M))
        else:
            dens = DensityField(state.rho.rho, state.rho.m, state.rho.M)
            uh = un
        rf = face_density(dens.rho)
        force = self.forcing(un, state.t)
        noisy = cfg.noise is not None and dW is not None and not self.g.is_zero
        noise = apply_noise(self.g, grid, cfg.noise, un, dW) if noisy else Velocity.zeros(grid)
        a = self.coefficients(state.t)
        diag = Velocity(rf.u / dt, rf.v / dt)
        rhs = Velocity(diag.u * uh.u + force.u + noise.u / dt,
                       diag.v * uh.v + force.v + noise.v / dt)
        ustar = self.helmholtz.solve(diag, a, rhs, x0=uh)
        unew, phi = weighted_project(grid, ustar, 1.0 / rf.u, 1.0 / rf.v)
        div = np.abs(divergence(grid, unew)).max()
        if div > DIV_TOL:
            raise InvariantViolation(f"|div u|_inf = {div:.2e} after projection")
        new = FlowState(dens, unew, phi / dt, state.t + dt)
        if report is not None:
            report.time.append(new.t)
            report.ke.append(weighted_energy(grid, rf, unew))
            report.dissipation.append(dt * diffusion_energy(grid, ustar, a))
            report.force_work.append(dt * force.dot(ustar, grid))
            report.noise_work.append(noise.dot(un, grid) if noisy else 0.0)
            report.ito.append(self._ito(un, rf) if noisy else 0.0)
        return new

    def _ito(self, w, rf):
        spec, grid = self.cfg.noise, self.grid
        total = 0.0
        for lam, gk in zip(spec.eigenvalues, self.g.fields(grid, spec, w)):
            pg = gk if self.g.kind == "additive" else leray_project(grid, gk)[0]
            total += lam * grid.cell_area * (np.sum(pg.u ** 2 / rf.u) + np.sum(pg.v ** 2 / rf.v))
        return self.cfg.dt * total

    def run(self, rho0: DensityField, u0: Velocity, path: NoisePath | None = None,
            callback=None):
        """Advance ``n_steps``; ``callback(n, state)`` sees every state,
        including the initial one (``n = 0``)."""
        cfg, grid = self.cfg, self.grid
        if cfg.noise is not None:
            if path is None:
                path = zero_path(cfg.noise.n_modes, cfg.n_steps, cfg.dt)
            if path.n_steps < cfg.n_steps or path.n_modes != cfg.noise.n_modes:
                raise ValueError("noise path does not cover the configured run")
            if not math.isclose(path.dt, cfg.dt, rel_tol=1e-12):
                raise ValueError(f"noise path dt {path.dt:g} differs from solver dt {cfg.dt:g}")
        u0 = u0.copy().enforce_walls()
        if np.abs(divergence(grid, u0)).max() > DIV_TOL:
            u0, _ = weighted_project(grid, u0, *(1.0 / x for x in
                                                 (face_density(rho0.rho).u,
                                                  face_density(rho0.rho).v)))
        rho0.check_bounds()
        state = FlowState(rho0, u0, np.zeros((grid.nx, grid.ny)), 0.0)
        report = EnergyReport(time=[0.0], ke=[state.kinetic_energy(grid)])
        traj = Trajectory()
        stride = cfg.snapshot_stride
        if stride:
            traj.times.append(0.0)
            traj.snapshots.append(state)
        if callback is not None:
            callback(0, state)
        for n in range(cfg.n_steps):
            dW = path.step(n) if cfg.noise is not None else None
            state = self.step(state, dW, report)
            if callback is not None:
                callback(n + 1, state)
            if stride and ((n + 1) % stride == 0 or n + 1 == cfg.n_steps):
                traj.times.append(state.t)
                traj.snapshots.append(state)
        traj.final = state
        return traj, report


def step(state: FlowState, cfg: SolverConfig, dW=None):
    return NSSolver(cfg).step(state, dW)


def run(cfg: SolverConfig, rho0: DensityField, u0: Velocity, path=None, callback=None):
    return NSSolver(cfg).run(rho0, u0, path, callback)


def gronwall_envelope(ke0, m, c2, c4, T, bdg=3.0):
    """Explicit bound on ``E sup_{t<=T} |sqrt(rho) u|^2``.

    Chain: ``2(u, f) <= c2 (1 + 3|u|^2)``; the Ito term is bounded by
    ``c4 (1 + |u|^2) / m`` (the noise enters the momentum, so the energy
    sees ``|g|^2 / rho``); ``|u|^2 <= KE / m``; the martingale
    ``2 int (u, g dW)`` is controlled by the Davis-BDG inequality with
    constant ``bdg`` and Young's inequality at weight ``m / (2 bdg)``,
    absorbing half the supremum.  Gronwall then gives
    ``2 (KE0 + b0 T) exp(2 b1 T)``.
    """
    young = 2.0 * bdg ** 2  # = 18 for bdg = 3
    b0 = c2 + c4 / m + young * c4 / m
    b1 = 3.0 * c2 / m + c4 / m ** 2 + young * c4 / m ** 2
    return 2.0 * (ke0 + b0 * T) * math.exp(2.0 * b1 * T)
