"""Initial density and velocity families."""
from __future__ import annotations

import numpy as np

from .mac import Grid2D, Velocity, from_stream
from .transport import DensityField


def _front(grid, lo, hi, width):
    xc, _ = grid.centers()
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.tanh((xc - 0.5) / width)


def _blob(grid, lo, hi, width):
    xc, yc = grid.centers()
    r2 = (xc - 0.5) ** 2 + (yc - 0.6) ** 2
    return lo + (hi - lo) * np.exp(-r2 / (2 * width ** 2))


DENSITY_FAMILIES = {
    "uniform": lambda grid, lo, hi, width: np.full((grid.nx, grid.ny), float(lo)),
    "front": _front,
    "blob": _blob,
}


def initial_density(grid: Grid2D, family="uniform", lo=1.0, hi=1.0, width=0.1, m=None, M=None):
    """Cell-centred density; bounds default to the family's range."""
    if family not in DENSITY_FAMILIES:
        raise ValueError(f"unknown density family {family!r}; "
                         f"choose from {sorted(DENSITY_FAMILIES)}")
    rho = DENSITY_FAMILIES[family](grid, float(lo), float(hi), float(width))
    m = float(min(lo, hi)) if m is None else float(m)
    M = float(max(lo, hi)) if M is None else float(M)
    field = DensityField(rho, m, M)
    field.check_bounds()
    return field


STREAM_FAMILIES = {
    "zero": lambda x, y: np.zeros_like(x),
    "bubble": lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2,
    "lowmode": lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y) / np.pi,
    "dipole": lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y) * np.sin(np.pi * y),
}


def initial_velocity(grid: Grid2D, family="bubble", amplitude=0.15) -> Velocity:
    """Discrete curl of ``amplitude * psi`` at the corners (exactly divergence-free)."""
    if family not in STREAM_FAMILIES:
        raise ValueError(f"unknown velocity family {family!r}; "
                         f"choose from {sorted(STREAM_FAMILIES)}")
    x, y = grid.corners()
    return from_stream(grid, amplitude * STREAM_FAMILIES[family](x, y))
