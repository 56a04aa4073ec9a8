import math

import numpy as np
import pytest

from stochhom.cell import CellCoefficient, EffectiveTensor, homogenize, make_family
from stochhom.cell.forcing import AveragedForce, make_force
from stochhom.errors import CFLViolation, ResolutionViolation, UnsupportedCoefficient
from stochhom.initial import initial_density, initial_velocity
from stochhom.mac import Grid2D, Velocity, divergence
from stochhom.noise import GOperator, NoiseSpec, sample_path
from stochhom.solver import (EnergyReport, FlowState, NSSolver, SolverConfig, energy_residual,
                             gronwall_envelope, step)

# first eigenvalue of the Stokes operator on the unit square with no-slip walls
# (equivalently the clamped-plate buckling eigenvalue)
STOKES_LAMBDA1 = 52.344691168


def identity():
    return EffectiveTensor.constant(np.eye(2))


def uniform_rho(grid, value=1.0):
    return initial_density(grid, "uniform", value, value)


def test_rest_state_stays_at_rest():
    g = Grid2D(16, 16)
    cfg = SolverConfig(g, 0.01, 5, identity())
    traj, rep = NSSolver(cfg).run(uniform_rho(g), Velocity.zeros(g))
    assert traj.final.u.max_abs() == 0.0
    assert np.all(np.asarray(rep.ke) == 0.0)
    assert np.all(energy_residual(rep) == 0.0)


def test_module_level_step_matches_solver():
    g = Grid2D(16, 16)
    cfg = SolverConfig(g, 0.01, 1, identity())
    st = FlowState(uniform_rho(g), initial_velocity(g, "bubble", 0.1), np.zeros((16, 16)))
    a = step(st, cfg)
    b = NSSolver(cfg).step(st)
    np.testing.assert_array_equal(a.u.u, b.u.u)
    assert a.t == pytest.approx(0.01)


def manufactured(t, x, y):
    """u = exp(-t) curl psi with psi = sin^2(pi x) sin^2(pi y) / pi."""
    e = math.exp(-t)
    sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
    sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
    u = e * 2 * sx ** 2 * sy * cy
    v = -e * 2 * sx * cx * sy ** 2
    return u, v


def manufactured_force(x, y, t):
    """f = du/dt + (u.grad)u - lap u (gradient parts are projected away)."""
    h = 1e-5
    u, v = manufactured(t, x, y)
    ux = (np.array(manufactured(t, x + h, y)) - np.array(manufactured(t, x - h, y))) / (2 * h)
    uy = (np.array(manufactured(t, x, y + h)) - np.array(manufactured(t, x, y - h))) / (2 * h)
    lap = (np.array(manufactured(t, x + h, y)) + np.array(manufactured(t, x - h, y))
           + np.array(manufactured(t, x, y + h)) + np.array(manufactured(t, x, y - h))
           - 4 * np.array(manufactured(t, x, y))) / h ** 2
    return -np.array([u, v]) + u * ux + v * uy - lap


def manufactured_error(n, dt, T=0.1):
    g = Grid2D(n, n)
    xu, yu = g.u_points()
    xv, yv = g.v_points()
    u0 = Velocity(manufactured(0, xu, yu)[0], manufactured(0, xv, yv)[1]).enforce_walls()
    cfg = SolverConfig(g, dt, int(round(T / dt)), identity(), body_force=manufactured_force)
    traj, _ = NSSolver(cfg).run(uniform_rho(g), u0)
    w = traj.final.u
    probes = [(0.25, 0.5), (0.5, 0.25), (0.7, 0.6)]
    err = 0.0
    for px, py in probes:
        i, j = int(round(px * n)), int(py * n)
        exact = manufactured(T, xu[i, j], yu[i, j])[0]
        err = max(err, abs(w.u[i, j] - exact))
    return err


def test_manufactured_solution_converges():
    e1 = manufactured_error(16, 0.01)
    e2 = manufactured_error(32, 0.005)
    e3 = manufactured_error(64, 0.0025)
    assert e3 < e2 < e1
    # first order in (dt, h) jointly
    assert e1 / e2 > 1.6 and e2 / e3 > 1.6
    assert e3 < 5e-3


def test_energy_monotone_without_forcing():
    g = Grid2D(48, 48)
    c = CellCoefficient.from_family(make_family("layered"), 32)
    rho = initial_density(g, "blob", 1.0, 3.0, 0.15)
    cfg = SolverConfig(g, 1 / 128, 40, c, eps=1 / 6)
    traj, rep = NSSolver(cfg).run(rho, initial_velocity(g, "dipole", 0.25))
    ke = np.asarray(rep.ke)
    assert np.all(np.diff(ke) < 0)
    assert np.all(energy_residual(rep) <= 1e-15)
    assert 1.0 <= traj.final.rho.rho.min() and traj.final.rho.rho.max() <= 3.0


def test_stokes_decay_matches_first_eigenvalue():
    g = Grid2D(128, 128)
    dt = 1e-3
    cfg = SolverConfig(g, dt, 200, identity(), advection=False)
    _, rep = NSSolver(cfg).run(uniform_rho(g), initial_velocity(g, "bubble", 1.0))
    ke = np.asarray(rep.ke)
    rate = -np.log(ke[-1] / ke[-101]) / (100 * dt)
    assert rate == pytest.approx(2 * STOKES_LAMBDA1, rel=0.05)
    # implicit Euler decays an eigenmode by (1 + dt lambda)^-1 per step
    assert rate == pytest.approx(2 * math.log1p(dt * STOKES_LAMBDA1) / dt, rel=0.02)


def test_residual_shrinks_under_refinement():
    def worst(n, dt):
        g = Grid2D(n, n)
        rho = initial_density(g, "front", 1.0, 2.0, 0.1)
        cfg = SolverConfig(g, dt, round(0.05 / dt), identity())
        _, rep = NSSolver(cfg).run(rho, initial_velocity(g, "bubble", 0.5))
        res = energy_residual(rep)
        assert np.all(res <= 1e-15)
        return np.abs(res).sum()

    coarse, fine = worst(32, 1 / 200), worst(64, 1 / 400)
    assert fine < coarse


def test_additive_noise_residual_mean_zero():
    g = Grid2D(16, 16)
    spec = NoiseSpec(n_modes=8)
    op = GOperator("additive", sigma=1.0)
    totals = []
    for s in range(256):
        sp = spec.with_seed(s)
        cfg = SolverConfig(g, 1e-3, 20, identity(), noise=sp, g=op, advection=False)
        _, rep = NSSolver(cfg).run(uniform_rho(g), Velocity.zeros(g), sample_path(sp, 20, 1e-3))
        totals.append(energy_residual(rep).sum())
    totals = np.asarray(totals)
    se = totals.std(ddof=1) / math.sqrt(totals.size)
    assert abs(totals.mean()) < 3 * se


def test_divergence_free_under_noise_and_force():
    g = Grid2D(32, 32)
    c = CellCoefficient.from_family(make_family("separable"), 32)
    spec = NoiseSpec(seed=4)
    cfg = SolverConfig(g, 1 / 256, 20, c, eps=1 / 4, force=make_force("saturation"),
                       noise=spec, g=GOperator("multiplicative", 1.0))
    worst = []
    NSSolver(cfg).run(initial_density(g, "front", 1.0, 2.0), initial_velocity(g),
                      sample_path(spec, 20, 1 / 256),
                      callback=lambda n, st: worst.append(np.abs(divergence(g, st.u)).max()))
    assert max(worst) <= 1e-8


def test_trajectory_bitwise_deterministic():
    g = Grid2D(24, 24)
    spec = NoiseSpec(seed=8)
    c = CellCoefficient.from_family(make_family("layered"), 16)
    cfg = SolverConfig(g, 1 / 128, 10, c, eps=1 / 3, force=make_force("damping"), noise=spec,
                       g=GOperator("multiplicative", 0.5), snapshot_stride=5)
    path = sample_path(spec, 10, 1 / 128)
    rho = initial_density(g, "blob", 1.0, 2.0)
    a, ra = NSSolver(cfg).run(rho, initial_velocity(g), path)
    b, rb = NSSolver(cfg).run(rho, initial_velocity(g), path)
    assert len(a.snapshots) == 3
    assert a.final.u.u.tobytes() == b.final.u.u.tobytes()
    assert a.final.rho.rho.tobytes() == b.final.rho.rho.tobytes()
    assert ra.ke == rb.ke


def test_guards():
    g = Grid2D(32, 32)
    c = CellCoefficient.from_family(make_family("layered"), 16)
    with pytest.raises(ResolutionViolation, match="eps/h"):
        NSSolver(SolverConfig(g, 1e-3, 1, c, eps=1 / 8))
    with pytest.raises(ResolutionViolation, match="dt"):
        NSSolver(SolverConfig(g, 0.1, 1, c, eps=1 / 4))
    with pytest.raises(TypeError):
        SolverConfig(g, 0.01, 1, c).validate()
    cfg = SolverConfig(g, 0.05, 1, identity())
    with pytest.raises(CFLViolation):
        NSSolver(cfg).run(uniform_rho(g), initial_velocity(g, "bubble", 5.0))
    with pytest.raises(UnsupportedCoefficient):
        NSSolver(SolverConfig(g, 0.01, 1, EffectiveTensor.constant([[2, 0.5], [0.5, 1]])))


def test_homogenized_and_oscillating_agree_for_constant_coefficient():
    g = Grid2D(32, 32)
    c = CellCoefficient.from_family(make_family("constant", a11=1.5, a22=1.5), 8)
    f = make_force("saturation")
    rho = initial_density(g, "front", 1.0, 2.0)
    u0 = initial_velocity(g)
    osc, _ = NSSolver(SolverConfig(g, 1 / 64, 8, c, eps=1 / 4, force=f)).run(rho, u0)
    hom, _ = NSSolver(SolverConfig(g, 1 / 64, 8, homogenize(c),
                                   force=AveragedForce(f))).run(rho, u0)
    # saturation force oscillates in y2, so only the diffusion part is identical
    assert (osc.final.u - hom.final.u).max_abs() < 0.05 * hom.final.u.max_abs()


def test_gronwall_envelope_formula():
    # no force, no noise: the bound is 2 KE0 with no growth
    assert gronwall_envelope(0.3, 1.0, 0.0, 0.0, 5.0) == pytest.approx(0.6)
    m, c2, c4, T = 0.5, 1.0, 0.2, 0.25
    b0 = c2 + 19 * c4 / m
    b1 = 3 * c2 / m + 19 * c4 / m ** 2
    assert gronwall_envelope(0.1, m, c2, c4, T) == pytest.approx(2 * (0.1 + b0 * T)
                                                                 * math.exp(2 * b1 * T))


def test_energy_report_csv(tmp_path):
    rep = EnergyReport(time=[0.0, 0.1], ke=[1.0, 0.5], dissipation=[0.2], force_work=[0.0],
                       noise_work=[0.0], ito=[0.0])
    rep.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "step,time,KE,dissipation,force_work,noise_work,ito,residual"
    assert lines[2].split(",")[-1] == repr(-0.5 + 0.4)
