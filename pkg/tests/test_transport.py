import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochhom.errors import BoundViolation, CFLViolation
from stochhom.mac import Grid2D, Velocity, from_stream
from stochhom.transport import (DensityField, advance_density, cfl_number, minmod,
                                substep_count)


def random_flow(grid, rng, cfl, dt):
    """Random divergence-free velocity scaled to a given CFL number."""
    x, y = grid.corners()
    psi = np.zeros_like(x)
    for _ in range(4):
        j, l = rng.integers(1, 5, 2)
        psi += rng.normal() * np.sin(j * np.pi * x) * np.sin(l * np.pi * y)
    w = from_stream(grid, psi)
    return w * (cfl / cfl_number(grid, w, dt))


def test_minmod():
    np.testing.assert_array_equal(minmod(np.array([1., -1., 2., 0.]), np.array([2., 1., 1., 3.])),
                                  [1., 0., 1., 0.])


def test_constant_density_is_preserved(rng):
    g = Grid2D(16, 16)
    w = random_flow(g, rng, 0.8, 0.01)
    rho = advance_density(g, DensityField(np.full((16, 16), 1.3), 1.3, 1.3), w, 0.01)
    np.testing.assert_allclose(rho.rho, 1.3, rtol=0, atol=1e-15)


def test_maximum_principle_thousand_random_steps():
    rng = np.random.default_rng(11)
    g = Grid2D(24, 24)
    xc, yc = g.centers()
    m, M = 0.5, 3.0
    rho = DensityField(np.where((xc - 0.5) ** 2 + (yc - 0.5) ** 2 < 0.1, M, m)
                       + 0.0 * xc, m, M)
    mass0 = rho.mass(g)
    worst = 0.0
    for k in range(1000):
        if k % 50 == 0:
            w = random_flow(g, rng, rng.uniform(0.1, 0.9), 0.01)
        rho = advance_density(g, rho, w, 0.01)
        assert m <= rho.rho.min() and rho.rho.max() <= M
        worst = max(worst, abs(rho.mass(g) - mass0) / mass0)
    assert worst <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.9))
def test_bounds_property(seed, cfl):
    rng = np.random.default_rng(seed)
    g = Grid2D(12, 12)
    rho = DensityField(rng.uniform(1.0, 2.0, (12, 12)), 1.0, 2.0)
    w = random_flow(g, rng, cfl, 0.05)
    lo, hi = rho.rho.min(), rho.rho.max()
    for _ in range(5):
        rho = advance_density(g, rho, w, 0.05)
    assert lo <= rho.rho.min() and rho.rho.max() <= hi


def test_substeps_guarantee_convexity(rng):
    g = Grid2D(16, 16)
    w = random_flow(g, rng, 0.9, 0.1)
    assert substep_count(g, w, 0.1) >= 1
    assert substep_count(g, Velocity.zeros(g), 0.1) == 1


def test_cfl_and_divergence_preconditions(rng):
    g = Grid2D(16, 16)
    rho = DensityField(np.ones((16, 16)), 1.0, 1.0)
    w = random_flow(g, rng, 1.5, 0.01)
    with pytest.raises(CFLViolation, match="CFL"):
        advance_density(g, rho, w, 0.01)
    bad = Velocity.zeros(g)
    bad.u[5, 5] = 0.01
    with pytest.raises(CFLViolation, match="div"):
        advance_density(g, rho, bad, 0.01)


def test_bound_check():
    with pytest.raises(BoundViolation):
        DensityField(np.array([[1.0, 2.5]]), 1.0, 2.0).check_bounds()
    with pytest.raises(ValueError):
        DensityField(np.ones((2, 2)), 2.0, 1.0)
