"""Numerical toolkit for periodic homogenization of stochastic
variable-density incompressible flow on the unit square."""

__version__ = "0.1.0"

from .cell import CellCoefficient, CellHomogenizer, EffectiveTensor, homogenize, make_family  # noqa: E402
from .mac import Grid2D, Velocity  # noqa: E402
from .noise import GOperator, NoiseSpec, sample_path  # noqa: E402
from .solver import NSSolver, SolverConfig  # noqa: E402
from .transport import DensityField, advance_density  # noqa: E402

__all__ = ["CellCoefficient", "CellHomogenizer", "EffectiveTensor", "homogenize", "make_family", "Grid2D",
           "Velocity", "NoiseSpec", "GOperator", "sample_path", "NSSolver", "SolverConfig",
           "DensityField", "advance_density", "__version__"]
