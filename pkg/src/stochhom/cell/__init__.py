from .coefficients import (CellCoefficient, Checkerboard, Constant, Layered, Separable,
                           Sinusoidal, TimeModulated, make_family, read_coefficient,
                           validate_coefficient, write_coefficient)
from .forcing import AveragedForce, ForceField, average_force, check_force_constants, make_force
from .homogenizer import (CellHomogenizer, CorrectorSet, EffectiveTensor, bracket_violation,
                          effective_tensor, solve_cell_problem, solve_correctors,
                          voigt_reuss_bounds)


def homogenize(c, rtol=1e-10, maxiter=5000):
    """Validate, solve both cell problems and assemble the effective tensor."""
    validate_coefficient(c)
    return effective_tensor(c, solve_correctors(c, rtol, maxiter))
