"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (also collected in the
pytest terminal summary) before asserting.
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from stochhom.cell import (CellCoefficient, bracket_violation, homogenize, make_family,
                           voigt_reuss_bounds)
from stochhom.cell.forcing import make_force
from stochhom.cli import main
from stochhom.initial import initial_density, initial_velocity
from stochhom.lab import ExperimentPlan, run_ladder
from stochhom.mac import Grid2D, divergence, face_density
from stochhom.noise import GOperator, NoiseSpec, sample_path
from stochhom.solver import NSSolver, SolverConfig, gronwall_envelope
from stochhom.transport import DensityField, advance_density, cfl_number

from conftest import random_elliptic_field, record_criterion
from test_transport import random_flow

LADDER = (1 / 4, 1 / 8, 1 / 16)


def test_c01_cell_problem_exactness():
    c = CellCoefficient.from_family(make_family("constant", a11=3.0, a12=0.7, a22=2.0), 64)
    t0 = time.perf_counter()
    eff = homogenize(c)
    dt = time.perf_counter() - t0
    eta_max = float(np.abs(eff.correctors.eta).max())
    err = float(np.abs(eff.a_bar - [[3.0, 0.7], [0.7, 2.0]]).max())
    ok = eta_max <= 1e-12 and err <= 1e-12 and dt < 1.0
    record_criterion(1, "constant coefficient: eta = 0, a_bar = a", ok,
                     f"max|eta| = {eta_max:.1e}, max|a_bar - a| = {err:.1e}, {dt * 1e3:.1f} ms (N=64)")
    assert ok


def test_c02_layered_oracle():
    c = CellCoefficient.from_family(make_family("layered", alpha=1, beta=4), 128)
    t0 = time.perf_counter()
    eff = homogenize(c)
    dt = time.perf_counter() - t0
    oracle = np.diag([1.6, 2.5])
    rel = float(np.abs(eff.a_bar - oracle).max() / 1.6)
    ok = rel <= 1e-3 and dt < 10
    record_criterion(2, "layered (1, 4) medium vs diag(1.6, 2.5)", ok,
                     f"a_bar diag = ({eff.a_bar[0, 0]:.6f}, {eff.a_bar[1, 1]:.6f}), "
                     f"rel err {rel:.1e}, {dt:.3f} s (N=128)")
    assert ok


def test_c03_voigt_reuss_suite():
    rng = np.random.default_rng(2024)
    violations, worst = 0, -np.inf
    for _ in range(20):
        c = random_elliptic_field(rng, n=32, n_tau=int(rng.integers(1, 3)), diagonal=True)
        eff = homogenize(c)
        lo, hi = voigt_reuss_bounds(c)
        v = bracket_violation(eff.a_bar, lo, hi)
        worst = max(worst, v)
        violations += v > 1e-10 * np.abs(eff.a_bar).max()
    ok = violations == 0
    record_criterion(3, "Voigt-Reuss bracket on 20 random fields", ok,
                     f"{violations} violations, largest signed excess {worst:.2e}")
    assert ok


def test_c04_density_maximum_principle():
    rng = np.random.default_rng(4)
    g = Grid2D(32, 32)
    m, M = 1.0, 3.0
    rho = DensityField(rng.choice([m, M], size=(32, 32)), m, M)
    mass0 = rho.mass(g)
    lo, hi, drift = np.inf, -np.inf, 0.0
    for k in range(1000):
        w = random_flow(g, rng, rng.uniform(0.05, 0.9), 0.01)
        rho = advance_density(g, rho, w, 0.01)
        lo, hi = min(lo, rho.rho.min()), max(hi, rho.rho.max())
        drift = max(drift, abs(rho.mass(g) - mass0) / mass0)
    ok = m <= lo and hi <= M and drift <= 1e-12
    record_criterion(4, "density maximum principle, 1000 random steps", ok,
                     f"rho in [{lo:.17g}, {hi:.17g}] vs [{m:g}, {M:g}], mass drift {drift:.1e}")
    assert ok


def test_c05_divergence_after_every_step():
    g = Grid2D(128, 128)
    dt, T = 1e-3, 0.5
    spec = NoiseSpec(n_modes=16, seed=5)
    c = CellCoefficient.from_family(make_family("layered"), 64)
    cfg = SolverConfig(g, dt, round(T / dt), c, eps=1 / 8, force=make_force("saturation"),
                       noise=spec, g=GOperator("multiplicative", 1.0))
    worst = []
    NSSolver(cfg).run(initial_density(g, "front", 1.0, 2.0), initial_velocity(g, "bubble", 0.15),
                      sample_path(spec, cfg.n_steps, dt),
                      callback=lambda n, st: worst.append(float(np.abs(divergence(g, st.u)).max())))
    ok = len(worst) == cfg.n_steps + 1 and max(worst) <= 1e-8
    record_criterion(5, "||div u||_inf after every step (128^2, T=0.5, dt=1e-3, K=16)", ok,
                     f"max over {len(worst) - 1} steps = {max(worst):.2e}")
    assert ok


def test_c06_deterministic_energy_decay():
    g = Grid2D(64, 64)
    c = CellCoefficient.from_family(make_family("layered"), 64)
    cfg = SolverConfig(g, 1 / 256, 32, c, eps=1 / 8)
    _, rep = NSSolver(cfg).run(initial_density(g, "blob", 1.0, 3.0, 0.15),
                               initial_velocity(g, "dipole", 0.3))
    d = np.diff(np.asarray(rep.ke))
    ok = bool(np.all(d < 0))
    record_criterion(6, "f = g = 0: KE strictly decreasing every step", ok,
                     f"{int(np.sum(d < 0))}/{d.size} steps decrease, "
                     f"largest increment {d.max():.2e}")
    assert ok


def test_c07_moment_envelope():
    g = Grid2D(32, 32)
    dt, T, n_samples = 1 / 128, 0.5, 64
    spec = NoiseSpec(n_modes=16)
    op = GOperator("additive", 0.5)
    force = make_force("saturation")
    c = CellCoefficient.from_family(make_family("layered"), 32)
    rho = initial_density(g, "front", 1.0, 2.0)
    u0 = initial_velocity(g, "bubble", 0.05)
    sups = []
    for s in range(n_samples):
        sp = spec.with_seed(s)
        cfg = SolverConfig(g, dt, round(T / dt), c, eps=1 / 4, force=force, noise=sp, g=op)
        _, rep = NSSolver(cfg).run(rho, u0, sample_path(sp, cfg.n_steps, dt))
        sups.append(max(rep.ke))
    sups = np.asarray(sups)
    mean, se = sups.mean(), sups.std(ddof=1) / math.sqrt(n_samples)
    _, c4 = op.safe_constants(g, spec)
    ke0 = float(np.sum(face_density(rho.rho).u * u0.u ** 2)
                + np.sum(face_density(rho.rho).v * u0.v ** 2)) * g.cell_area
    bound = gronwall_envelope(ke0, rho.m, force.c2, c4, T)
    ok = mean + 3 * se < bound
    record_criterion(7, "E sup ||sqrt(rho) u||^2 below Gronwall envelope (64 samples)", ok,
                     f"MC {mean:.4g} + 3 SE {3 * se:.2g} < bound {bound:.4g} "
                     f"(m={rho.m:g}, c2={force.c2:g}, c4={c4:.3g}, T={T:g})")
    assert ok


# --- the layered benchmark ladder (criteria 8, 9, 10) --------------------------------

def benchmark_plan(stochastic):
    g = Grid2D(256, 256)
    dt, T = 1 / 256, 0.125
    c = CellCoefficient.from_family(make_family("layered", alpha=1, beta=4), 64)
    spec, op = (NoiseSpec(n_modes=16), GOperator("multiplicative", 1.0)) if stochastic \
        else (None, None)
    base = SolverConfig(g, dt, round(T / dt), c, force=make_force("saturation"), noise=spec,
                        g=op)
    return ExperimentPlan(base, initial_density(g, "front", 1.0, 2.0),
                          initial_velocity(g, "bubble", 0.15), eps_ladder=LADDER,
                          n_samples=8 if stochastic else 1, master_seed=2024)


@pytest.fixture(scope="module")
def deterministic_ladder():
    t0 = time.perf_counter()
    rep = run_ladder(benchmark_plan(False))
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def stochastic_ladder():
    t0 = time.perf_counter()
    rep = run_ladder(benchmark_plan(True))
    return rep, time.perf_counter() - t0


def _fmt(values):
    return ", ".join(f"{v:.4g}" for v in values)


@pytest.mark.slow
def test_c08_homogenization_ladder(deterministic_ladder, stochastic_ladder):
    det, t_det = deterministic_ladder
    sto, t_sto = stochastic_ladder
    e = det.mean("strong")
    det_ok = bool(np.all(np.diff(e) < 0))
    dmean, dse = sto.decrements("strong")
    sto_ok = bool(np.all(dmean > 2 * dse)) and sto.shared_paths()
    total = t_det + t_sto
    ok = det_ok and sto_ok and total <= 1800
    record_criterion(8, "err_strong decreasing on eps = 1/4, 1/8, 1/16 (256^2)", ok,
                     f"deterministic [{_fmt(e)}]; stochastic decrements [{_fmt(dmean)}] vs "
                     f"2 SE [{_fmt(2 * dse)}]; runtime {t_det:.0f} s + {t_sto:.0f} s")
    assert ok


@pytest.mark.slow
def test_c09_corrector_result(deterministic_ladder, stochastic_ladder):
    det, _ = deterministic_ladder
    sto, _ = stochastic_ladder
    corr, plain = det.mean("corrector"), det.mean("plain")
    below = bool(np.all(corr < plain))
    decreasing = bool(np.all(np.diff(corr) < 0))
    sc, sp = sto.mean("corrector"), sto.mean("plain")
    dmean, dse = sto.decrements("corrector")
    sto_ok = bool(np.all(sc < sp)) and bool(np.all(dmean > 2 * dse))
    ok = below and decreasing and sto_ok
    record_criterion(9, "err_corrector < err_plain and decreasing along the ladder", ok,
                     f"corrector [{_fmt(corr)}] vs plain [{_fmt(plain)}]; stochastic "
                     f"corrector [{_fmt(sc)}]")
    assert ok


@pytest.mark.slow
def test_c10_weak_sigma_pairing(deterministic_ladder, stochastic_ladder):
    det, _ = deterministic_ladder
    sto, _ = stochastic_ladder
    gap = det.mean("weak_rho")
    ok = bool(np.all(np.diff(gap) < 0)) and bool(np.all(np.diff(sto.mean("weak_rho")) < 0))
    record_criterion(10, "rho^eps vs two-scale limit, sin(2 pi y1) test function", ok,
                     f"|pairing - limit| = [{_fmt(gap)}]; momentum pairing gap "
                     f"[{_fmt(det.mean('weak_momentum'))}]")
    assert ok


# --- reproducibility ------------------------------------------------------------------

REPRO_CONFIG = """
[grid]
nx = 32
ny = 32
[time]
T = 1/16
dt = 1/256
[coefficient]
family = separable
kappa = 1
n_y = 32
[force]
family = saturation
c1 = 3
c2 = 3
[noise]
kind = multiplicative
sigma = 1
seed = 17
[initial]
density = front
rho_lo = 1
rho_hi = 2
[run]
eps = 1/4
[plan]
eps = 1, 1/2, 1/4
samples = 3
master_seed = 5
"""


def test_c11_reproducibility(tmp_path, capsys):
    cfg = tmp_path / "repro.ini"
    cfg.write_text(REPRO_CONFIG)
    outputs = []
    for k in range(2):
        root = tmp_path / f"serial{k}"
        assert main(["run", str(cfg), "-o", str(root)]) == 0
        assert main(["converge", str(cfg), "-o", str(root), "--jobs", "1"]) == 0
        files = {}
        for d in sorted(root.iterdir()):
            for p in sorted(d.iterdir()):
                files[f"{d.name}/{p.name}"] = p.read_bytes()
        outputs.append(files)
    serial_identical = outputs[0] == outputs[1]
    root = tmp_path / "parallel"
    assert main(["converge", str(cfg), "-o", str(root), "--jobs", "2"]) == 0
    par = next(root.glob("converge-*"))
    ser_key = next(k for k in outputs[0] if k.endswith("report.csv"))
    parallel_identical = (par / "report.csv").read_bytes() == outputs[0][ser_key]
    capsys.readouterr()
    ok = serial_identical and parallel_identical
    record_criterion(11, "byte-identical serial reruns; parallel tables match serial", ok,
                     f"serial: {len(outputs[0])} files identical = {serial_identical}; "
                     f"--jobs 2 report.csv identical = {parallel_identical}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
