"""Epsilon-ladder experiments: shared-path runs of the oscillating and the
homogenized systems, the convergence/corrector metrics, and rate fits."""
from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import homogenize
from .cell.coefficients import CellCoefficient
from .cell.forcing import AveragedForce, ForceField, average_force
from .cell.homogenizer import EffectiveTensor, corrector_slope, corrector_slope_from_flux
from .errors import DegenerateInput, PlanInfeasible, ResolutionViolation
from .mac import Grid2D, Velocity, face_density
from .noise import sample_path, zero_path
from .solver import NSSolver, SolverConfig
from .transport import DensityField

METRICS = ("strong", "plain", "corrector", "weak_rho", "weak_rho_plain", "weak_momentum")


# --- gradients and the corrector ------------------------------------------------

def velocity_gradients(grid: Grid2D, w: Velocity):
    """Native MAC velocity gradients ``{(k, m): array}``.

    ``(0, 0)`` and ``(1, 1)`` live at cell centres, ``(0, 1)`` and ``(1, 0)``
    at corners (walls use the no-slip ghost values).
    """
    ux = (w.u[1:] - w.u[:-1]) / grid.hx
    vy = (w.v[:, 1:] - w.v[:, :-1]) / grid.hy
    ue = np.concatenate([-w.u[:, :1], w.u, -w.u[:, -1:]], axis=1)
    ve = np.concatenate([-w.v[:1], w.v, -w.v[-1:]], axis=0)
    return {(0, 0): ux, (0, 1): (ue[:, 1:] - ue[:, :-1]) / grid.hy,
            (1, 0): (ve[1:] - ve[:-1]) / grid.hx, (1, 1): vy}


def _corner_to_center(c):
    return 0.25 * (c[:-1, :-1] + c[1:, :-1] + c[:-1, 1:] + c[1:, 1:])


def _center_to_corner(c):
    p = np.pad(c, 1, mode="edge")
    return 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])


def _location(km):
    return "center" if km[0] == km[1] else "corner"


def gradients_everywhere(grid, w):
    """Every ``d_i u_k`` at both cell centres and corners."""
    native = velocity_gradients(grid, w)
    out = {}
    for km, arr in native.items():
        if _location(km) == "center":
            out[km, "center"] = arr
            out[km, "corner"] = _center_to_corner(arr)
        else:
            out[km, "corner"] = arr
            out[km, "center"] = _corner_to_center(arr)
    return out


def corrector_field(grid: Grid2D, w: Velocity, correctors, eps, t=0.0, a_local=None,
                    mode="interp"):
    """``grad_y u_bar`` at the native gradient locations of ``grad u``.

    ``C[k, m] = -sum_i d_i u_k(x) * d_{y_m} eta_i(x/eps, t/eps)``.  With
    ``mode="flux"`` the corrector slope is rebuilt from the interpolated cell
    flux and ``a_local`` (a :class:`FaceCoefficients` of the oscillating run);
    ``mode="interp"`` interpolates the slope itself.
    """
    if mode not in ("flux", "interp"):
        raise ValueError(f"unknown corrector mode {mode!r}")
    if mode == "flux" and a_local is None:
        raise ValueError("flux reconstruction needs the local coefficients")
    grads = gradients_everywhere(grid, w)
    xc, yc = grid.centers()
    xk, yk = grid.corners()
    pts = {"center": (xc, yc), "corner": (xk, yk)}
    local = None
    if a_local is not None:
        local = {(0, 0): a_local.ux, (0, 1): a_local.uy, (1, 0): a_local.vx, (1, 1): a_local.vy}
    out = {}
    for k in (0, 1):
        for m in (0, 1):
            loc = _location((k, m))
            x, y = pts[loc]
            total = np.zeros_like(x)
            for i in (0, 1):
                if mode == "flux":
                    s = corrector_slope_from_flux(correctors, i, m, x / eps, y / eps, t / eps,
                                                  local[k, m])
                else:
                    s = corrector_slope(correctors, i, m, x / eps, y / eps, t / eps)
                total -= grads[(k, i), loc] * s
            out[k, m] = total
    return out


def _grad_sq(grid, grads):
    return grid.cell_area * sum(float(np.sum(g ** 2)) for g in grads.values())


# --- weak-Sigma pairings --------------------------------------------------------

@dataclass(frozen=True)
class SeparableTest:
    """Separable test function ``phi(x, y, t) * psi(y1, y2, tau)``.

    ``psi`` must be one-periodic in each fast variable.  Defaults give
    ``phi = 1 + x + y/2`` (non-vanishing on the walls) and
    ``psi = sin(2 pi y1)``.
    """

    phi: object = None
    psi: object = None
    cell_average: float | None = None

    def slow(self, x, y, t):
        return 1.0 + x + 0.5 * y if self.phi is None else self.phi(x, y, t)

    def fast(self, y1, y2, tau):
        return np.sin(2 * np.pi * y1) if self.psi is None else self.psi(y1, y2, tau)

    def mean_fast(self, n=64):
        if self.cell_average is not None:
            return self.cell_average
        if self.psi is None:
            return 0.0
        s = (np.arange(n) + 0.5) / n - 0.5
        y1, y2, tau = np.meshgrid(s, s, s, indexing="ij")
        return float(np.mean(self.psi(y1, y2, tau)))


SIN_TEST = SeparableTest()
FLAT_TEST = SeparableTest(psi=lambda y1, y2, tau: np.ones_like(y1), cell_average=1.0)


def weak_sigma_pairing(snapshots, points, test: SeparableTest, eps, dt, cell_area):
    """Rectangle-rule quadrature of ``int int field * test(x, t, x/eps, t/eps)``.

    ``snapshots`` is a sequence ``(t, array)`` sampled on ``points``.
    """
    x, y = points
    total = 0.0
    for t, arr in snapshots:
        total += dt * cell_area * float(np.sum(arr * test.slow(x, y, t)
                                               * test.fast(x / eps, y / eps, t / eps)))
    return total


def two_scale_limit_pairing(snapshots, points, test: SeparableTest, dt, cell_area):
    """Companion limit ``int int limit(x, t) phi(x, t) <psi>``."""
    x, y = points
    mean = test.mean_fast()
    return sum(dt * cell_area * mean * float(np.sum(arr * test.slow(x, y, t)))
               for t, arr in snapshots)


# --- rate fits --------------------------------------------------------------------

def fit_rate(eps, errors):
    """Least-squares slope of ``log err`` against ``log eps`` and its R^2."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size < 3 or err.size != eps.size:
        raise DegenerateInput("a rate fit needs at least three ladder points")
    if np.any(~np.isfinite(err)) or np.any(err <= 0) or np.any(eps <= 0):
        raise DegenerateInput("rate fits need strictly positive errors")
    lx, ly = np.log(eps), np.log(err)
    slope, icpt = np.polyfit(lx, ly, 1)
    ss_res = float(np.sum((ly - (slope * lx + icpt)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(ly ** 2))) else 1.0 - ss_res / ss_tot
    if abs(slope) < 1e-12:
        slope = 0.0
    return float(slope), float(r2)


# --- plans and reports ------------------------------------------------------------

@dataclass
class ExperimentPlan:
    """An epsilon ladder over one base configuration.

    ``base.eps`` is ignored; ``base.coefficient`` must be the oscillating
    :class:`CellCoefficient` and ``base.force`` (if any) the oscillating
    :class:`ForceField`.  The effective tensor and averaged force are
    computed once per plan.
    """

    base: SolverConfig
    rho0: DensityField
    u0: Velocity
    eps_ladder: tuple = (0.25, 0.125, 0.0625)
    n_samples: int = 1
    master_seed: int = 0
    corrector_mode: str = "interp"
    effective: EffectiveTensor | None = None
    averaged_force: AveragedForce | None = None

    def validate(self):
        ladder = tuple(float(e) for e in self.eps_ladder)
        if not ladder:
            raise PlanInfeasible("empty epsilon ladder")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise PlanInfeasible("the epsilon ladder must be strictly decreasing")
        if self.n_samples < 1:
            raise PlanInfeasible("need at least one sample")
        if not isinstance(self.base.coefficient, CellCoefficient):
            raise PlanInfeasible("the plan's base coefficient must be a CellCoefficient")
        for e in ladder:
            try:
                dataclasses.replace(self.base, eps=e).validate()
            except ResolutionViolation as exc:
                raise PlanInfeasible(f"eps = {e:g}: {exc}") from exc
        self.eps_ladder = ladder
        return self

    @property
    def stochastic(self):
        return self.base.noise is not None and self.base.g is not None and not self.base.g.is_zero

    def prepare(self):
        """Fill in the homogenized ingredients (cell problems, averaged force)."""
        if self.effective is None:
            self.effective = homogenize(self.base.coefficient)
        f = self.base.force
        if self.averaged_force is None and isinstance(f, ForceField) and not f.is_zero:
            self.averaged_force = average_force(f, check=False)
        return self

    def sample_seed(self, s):
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(s,))
        return int(ss.generate_state(1, np.uint64)[0])

    def config_for(self, eps):
        if eps is None:
            return dataclasses.replace(self.base, eps=None, coefficient=self.effective,
                                       force=self.averaged_force)
        return dataclasses.replace(self.base, eps=float(eps))


@dataclass
class ConvergenceReport:
    eps: tuple
    values: dict  # metric -> (n_samples, n_eps) array
    path_hashes: list = field(default_factory=list)  # per sample: hashes of every run
    limits: dict = field(default_factory=dict)  # metric -> per-sample two-scale limits
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return next(iter(self.values.values())).shape[0]

    def mean(self, metric):
        return self.values[metric].mean(axis=0)

    def stderr(self, metric):
        v = self.values[metric]
        if v.shape[0] < 2:
            return np.zeros(v.shape[1])
        return v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])

    def decrements(self, metric):
        """Paired ladder decrements ``err(eps_k) - err(eps_{k+1})``: mean and stderr."""
        v = self.values[metric]
        d = v[:, :-1] - v[:, 1:]
        se = d.std(axis=0, ddof=1) / math.sqrt(d.shape[0]) if d.shape[0] > 1 else np.zeros(d.shape[1])
        return d.mean(axis=0), se

    def slopes(self):
        out = {}
        for metric in self.values:
            try:
                out[metric] = fit_rate(self.eps, np.abs(self.mean(metric)))
            except DegenerateInput as exc:
                out[metric] = str(exc)
        return out

    def shared_paths(self):
        return all(len(set(h)) == 1 for h in self.path_hashes)

    def table_rows(self):
        rows = []
        for metric in self.values:
            means, ses = self.mean(metric), self.stderr(metric)
            for e, m, s in zip(self.eps, means, ses):
                rows.append((e, metric, float(m), float(s), self.n_samples))
        return rows

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epsilon,metric,mean,stderr,n_samples\n")
            for e, metric, m, s, n in self.table_rows():
                fh.write(f"{e!r},{metric},{m!r},{s!r},{n}\n")

    def summary(self):
        slopes = {}
        for k, v in self.slopes().items():
            slopes[k] = v if isinstance(v, str) else {"slope": v[0], "r2": v[1]}
        return {"eps": list(self.eps), "n_samples": self.n_samples, "slopes": slopes,
                "shared_paths": self.shared_paths(), **self.meta}

    def to_json(self):
        raw = {"eps": list(self.eps),
               "values": {k: v.tolist() for k, v in self.values.items()},
               "limits": {k: list(v) for k, v in self.limits.items()},
               "metrics": list(self.values), "path_hashes": self.path_hashes,
               "meta": self.meta}
        return json.dumps(raw, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        order = raw.get("metrics", sorted(raw["values"]))
        values = {k: np.asarray(raw["values"][k], dtype=float) for k in order}
        return cls(tuple(raw["eps"]), values,
                   raw["path_hashes"], raw.get("limits", {}), raw.get("meta", {}))


# --- the ladder ---------------------------------------------------------------------

def _snapshot(grid, state):
    rf = face_density(state.rho.rho)
    return {"t": state.t, "u": state.u.copy(), "rho": state.rho.rho.copy(),
            "mu": rf.u * state.u.u, "mv": rf.v * state.u.v}


def _pairings(grid, snaps, eps, dt):
    xc = grid.centers()
    xu, xv = grid.u_points(), grid.v_points()
    rho = [(s["t"], s["rho"]) for s in snaps]
    mu = [(s["t"], s["mu"]) for s in snaps]
    mv = [(s["t"], s["mv"]) for s in snaps]
    out = {}
    if eps is None:
        out["weak_rho"] = two_scale_limit_pairing(rho, xc, SIN_TEST, dt, grid.cell_area)
        out["weak_rho_plain"] = two_scale_limit_pairing(rho, xc, FLAT_TEST, dt, grid.cell_area)
        out["weak_momentum"] = (two_scale_limit_pairing(mu, xu, SIN_TEST, dt, grid.cell_area)
                                + two_scale_limit_pairing(mv, xv, SIN_TEST, dt, grid.cell_area))
    else:
        out["weak_rho"] = weak_sigma_pairing(rho, xc, SIN_TEST, eps, dt, grid.cell_area)
        out["weak_rho_plain"] = weak_sigma_pairing(rho, xc, FLAT_TEST, eps, dt, grid.cell_area)
        out["weak_momentum"] = (weak_sigma_pairing(mu, xu, SIN_TEST, eps, dt, grid.cell_area)
                                + weak_sigma_pairing(mv, xv, SIN_TEST, eps, dt, grid.cell_area))
    return out


def run_sample(plan: ExperimentPlan, s: int):
    """All runs of one sample against one shared noise path."""
    base = plan.base
    grid, dt, n = base.grid, base.dt, base.n_steps
    if plan.stochastic:
        path = sample_path(base.noise.with_seed(plan.sample_seed(s)), n, dt)
    elif base.noise is not None:
        path = zero_path(base.noise.n_modes, n, dt)
    else:
        path = None
    digest = path.digest() if path is not None else "none"

    hom_snaps = []
    hom_solver = NSSolver(plan.config_for(None))
    hom_solver.run(plan.rho0, plan.u0, path,
                   callback=lambda k, st: k and hom_snaps.append(_snapshot(grid, st)))
    hom_grads = [velocity_gradients(grid, sn["u"]) for sn in hom_snaps]
    limits = _pairings(grid, hom_snaps, None, dt)
    correctors = plan.effective.correctors

    values = {m: [] for m in METRICS}
    for eps in plan.eps_ladder:
        solver = NSSolver(plan.config_for(eps))
        acc = {"strong": 0.0, "plain": 0.0, "corrector": 0.0}
        snaps = []

        def visit(k, st, solver=solver, acc=acc, snaps=snaps, eps=eps):
            if k == 0:
                return
            ref = hom_snaps[k - 1]
            diff = st.u - ref["u"]
            acc["strong"] += dt * diff.dot(diff, grid)
            ge = velocity_gradients(grid, st.u)
            gh = hom_grads[k - 1]
            plain = {km: ge[km] - gh[km] for km in ge}
            acc["plain"] += dt * _grad_sq(grid, plain)
            a_loc = solver.coefficients(st.t) if plan.corrector_mode == "flux" else None
            if correctors is None:
                cf = {km: 0.0 for km in ge}
            else:
                cf = corrector_field(grid, ref["u"], correctors, eps, st.t, a_loc,
                                     plan.corrector_mode)
            acc["corrector"] += dt * _grad_sq(grid, {km: plain[km] - cf[km] for km in ge})
            snaps.append(_snapshot(grid, st))

        solver.run(plan.rho0, plan.u0, path, callback=visit)
        pair = _pairings(grid, snaps, eps, dt)
        for m in ("strong", "plain", "corrector"):
            values[m].append(acc[m])
        for m in ("weak_rho", "weak_rho_plain", "weak_momentum"):
            values[m].append(abs(pair[m] - limits[m]))
    hashes = [digest] * (len(plan.eps_ladder) + 1)
    return values, hashes, limits


def run_ladder(plan: ExperimentPlan, jobs=1) -> ConvergenceReport:
    """Run every sample of the plan; results are reduced in sample order, so
    serial and parallel runs produce identical tables."""
    plan.validate().prepare()
    samples = range(plan.n_samples)
    if jobs > 1 and plan.n_samples > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_sample, [plan] * plan.n_samples, samples))
    else:
        results = [run_sample(plan, s) for s in samples]
    values = {m: np.array([r[0][m] for r in results], dtype=float) for m in METRICS}
    limits = {m: [r[2][m] for r in results] for m in results[0][2]}
    meta = {"grid": [plan.base.grid.nx, plan.base.grid.ny], "dt": plan.base.dt,
            "n_steps": plan.base.n_steps, "master_seed": plan.master_seed,
            "stochastic": plan.stochastic, "corrector_mode": plan.corrector_mode,
            "a_bar": plan.effective.a_bar.tolist()}
    return ConvergenceReport(plan.eps_ladder, values, [r[1] for r in results], limits, meta)
