import numpy as np
import pytest

from stochhom.errors import IndivisibleSteps, LipschitzViolation
from stochhom.mac import Grid2D, Velocity, divergence
from stochhom.noise import (GOperator, NoiseSpec, apply_noise, check_g_constants, coarsen_path,
                            mode_indices, mode_shapes, read_path, sample_path, write_path)


def test_eigenvalues_trace_class():
    spec = NoiseSpec(n_modes=16, gamma=1.5, lambda0=2.0)
    np.testing.assert_allclose(spec.eigenvalues, 2.0 * np.arange(1, 17) ** -3.0)
    with pytest.raises(ValueError):
        NoiseSpec(gamma=0.5)


def test_mode_ordering_and_normalisation():
    assert mode_indices(4) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    g = Grid2D(32, 32)
    modes = mode_shapes(g, 16)
    for m in modes:
        assert m.norm(g) == pytest.approx(1.0, rel=1e-12)
        assert np.abs(divergence(g, m)).max() < 1e-12


def test_paths_are_counter_based():
    spec = NoiseSpec(seed=42)
    full = sample_path(spec, 100, 0.01)
    window = sample_path(spec, 13, 0.01, first_step=37)
    np.testing.assert_array_equal(window.increments, full.increments[:, 37:50])
    again = sample_path(spec, 100, 0.01)
    assert again.digest() == full.digest()
    assert sample_path(spec.with_seed(43), 100, 0.01).digest() != full.digest()


def test_increment_moments_within_three_sigma():
    dt, n = 0.01, 4000
    inc = sample_path(NoiseSpec(seed=5), n, dt).increments
    count = inc.size
    mean, var = inc.mean(), inc.var()
    assert abs(mean) < 3 * np.sqrt(dt / count)
    # sample variance of N(0, dt) values has std dt * sqrt(2 / count)
    assert abs(var - dt) < 3 * dt * np.sqrt(2 / count)
    # modes are independent
    corr = np.corrcoef(inc)
    off = corr[~np.eye(16, dtype=bool)]
    assert np.abs(off).max() < 5 / np.sqrt(n)


def test_coarsening_sums_increments():
    p = sample_path(NoiseSpec(seed=1), 12, 0.1)
    c = coarsen_path(p, 3)
    assert c.dt == pytest.approx(0.3) and c.n_steps == 4
    np.testing.assert_allclose(c.increments[:, 1], p.increments[:, 3:6].sum(axis=1))
    with pytest.raises(IndivisibleSteps):
        coarsen_path(p, 5)


def test_path_file_round_trip(tmp_path):
    p = sample_path(NoiseSpec(n_modes=5, seed=9), 7, 0.25)
    write_path(tmp_path / "w.oscw", p)
    raw = (tmp_path / "w.oscw").read_bytes()
    assert raw[:4] == b"OSCW" and len(raw) == 4 + 32 + 4 + 4 + 8 + 8 * 5 * 7
    back, digest = read_path(tmp_path / "w.oscw")
    np.testing.assert_array_equal(back.increments, p.increments)
    assert digest == NoiseSpec(n_modes=5, seed=9).digest()
    assert back.digest() == p.digest()


@pytest.mark.parametrize("kind", ["multiplicative", "additive"])
def test_applied_noise_is_divergence_free(rng, kind):
    g = Grid2D(32, 32)
    spec = NoiseSpec(seed=3)
    op = GOperator(kind, sigma=0.7)
    w = Velocity(rng.standard_normal((33, 32)), rng.standard_normal((32, 33))).enforce_walls()
    out = apply_noise(op, g, spec, w, sample_path(spec, 1, 0.01).step(0))
    assert np.abs(divergence(g, out)).max() <= 1e-9
    assert out.max_abs() > 0


def test_zero_noise_cases(rng):
    g = Grid2D(16, 16)
    spec = NoiseSpec()
    w = Velocity.zeros(g)
    assert apply_noise(GOperator("multiplicative"), g, spec, w, np.ones(16)).max_abs() == 0.0
    assert apply_noise(GOperator("none"), g, spec, w, np.ones(16)).max_abs() == 0.0


def test_constants_certified_on_thousand_pairs():
    g = Grid2D(16, 16)
    spec = NoiseSpec()
    op = GOperator("multiplicative", sigma=0.5)
    c3, c4 = op.safe_constants(g, spec)
    lip, growth = check_g_constants(op, g, spec, n_pairs=1000)
    assert lip <= c3 and growth <= c4
    with pytest.raises(LipschitzViolation):
        check_g_constants(GOperator("multiplicative", 0.5, c3=lip / 2, c4=c4), g, spec,
                          n_pairs=200)
