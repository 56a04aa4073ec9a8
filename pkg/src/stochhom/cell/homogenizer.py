"""Periodic cell problem, correctors and the homogenized diffusion tensor.

Correctors follow the sign convention ``div_y(a (e_i - grad_y eta_i)) = 0``
with zero y-mean, so that the homogenized tensor is

    a_bar_ij = <a_ij> - <sum_m a_im d eta_j / d y_m>

and the two-scale gradient corrector is ``-sum_i du/dx_i grad_y eta_i``.
Each tau-slice is an independent elliptic problem discretised by the
periodic 5-point flux scheme with harmonic face coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..errors import SolverDiverged, UnsupportedCoefficient
from ..linalg import pcg
from .coefficients import CellCoefficient, cell_nodes, min_eigenvalue, validate_coefficient


def harmonic(a, b):
    return 2.0 * a * b / (a + b)


def face_coefficients(a11, a22):
    """Harmonic means on x-faces (between i, i+1) and y-faces (j, j+1)."""
    return harmonic(a11, np.roll(a11, -1, axis=-2)), harmonic(a22, np.roll(a22, -1, axis=-1))


@dataclass
class CorrectorSet:
    """Correctors ``eta[i]`` for directions i = 0, 1 on the cell grid.

    ``flux[i] = (qx, qy)`` holds the discrete cell fluxes
    ``a (e_i - grad eta_i)`` on x- and y-faces; they are what the
    effective tensor averages.
    """

    eta: np.ndarray            # (2, n_tau, n, n)
    flux: np.ndarray           # (2, 2, n_tau, n, n): direction, face axis
    residual_norm: np.ndarray  # (2, n_tau) relative residual per slice

    @property
    def n_y(self):
        return self.eta.shape[-1]

    @property
    def n_tau(self):
        return self.eta.shape[1]

    def slope(self, i, axis):
        """Forward difference of ``eta[i]`` along ``axis`` (0 = y1, 1 = y2),
        located on the corresponding faces."""
        e = self.eta[i]
        return (np.roll(e, -1, axis=axis + 1) - e) * self.n_y


@dataclass
class EffectiveTensor:
    a_bar: np.ndarray
    kappa_eff: float
    slices: np.ndarray | None = None  # per-tau-slice tensors before averaging
    correctors: CorrectorSet | None = None

    def __post_init__(self):
        self.a_bar = np.asarray(self.a_bar, dtype=float)

    @classmethod
    def constant(cls, a_bar):
        a_bar = np.asarray(a_bar, dtype=float)
        kappa = float(min_eigenvalue(a_bar[0, 0], a_bar[0, 1], a_bar[1, 1]))
        return cls(a_bar, kappa)


def _is_constant_slice(a11, a12, a22):
    return all(np.all(x == x.flat[0]) for x in (a11, a12, a22))


def _solve_slice(a11, a22, direction, rtol, maxiter):
    n = a11.shape[0]
    h = 1.0 / n
    ax, ay = face_coefficients(a11, a22)

    def apply(eta):
        gx = ax * (np.roll(eta, -1, axis=0) - eta) / h
        gy = ay * (np.roll(eta, -1, axis=1) - eta) / h
        return -((gx - np.roll(gx, 1, axis=0)) + (gy - np.roll(gy, 1, axis=1))) / h

    face = ax if direction == 0 else ay
    b = -(face - np.roll(face, 1, axis=direction)) / h

    k = np.arange(n)
    s2 = (4.0 / h ** 2) * np.sin(np.pi * k / n) ** 2
    symbol = ax.mean() * s2[:, None] + ay.mean() * s2[None, :]
    symbol[0, 0] = 1.0

    def precond(r):
        rh = fft.fft2(r)
        rh /= symbol
        rh[0, 0] = 0.0
        return fft.ifft2(rh).real

    def project(z):
        return z - z.mean()

    eta, info = pcg(apply, b, precond=precond, rtol=rtol, maxiter=maxiter,
                    project=project, error=SolverDiverged)
    eta = project(eta)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(b - apply(eta)) / bnorm if bnorm > 0 else 0.0
    qx = ax * ((1.0 if direction == 0 else 0.0) - (np.roll(eta, -1, axis=0) - eta) / h)
    qy = ay * ((1.0 if direction == 1 else 0.0) - (np.roll(eta, -1, axis=1) - eta) / h)
    return eta, qx, qy, res


def solve_cell_problem(c: CellCoefficient, direction, rtol=1e-10, maxiter=5000):
    """Corrector for one direction (0 for e_1, 1 for e_2) on every tau-slice.

    Returns ``(eta, flux, residuals)`` with ``eta`` of shape
    ``(n_tau, n, n)``, ``flux`` the ``(qx, qy)`` pair and the relative
    residual of each slice.
    """
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    a11, a12, a22 = c.components()
    nt, n, _ = a11.shape
    eta = np.zeros((nt, n, n))
    qx = np.zeros((nt, n, n))
    qy = np.zeros((nt, n, n))
    res = np.zeros(nt)
    for t in range(nt):
        if _is_constant_slice(a11[t], a12[t], a22[t]):
            # flux a e_i is divergence free; eta = 0 exactly
            qx[t] = a11[t] if direction == 0 else a12[t]
            qy[t] = a12[t] if direction == 0 else a22[t]
            continue
        if np.any(a12[t] != 0.0):
            raise UnsupportedCoefficient(
                "the 5-point flux scheme needs a12 = 0 on spatially varying slices")
        eta[t], qx[t], qy[t], res[t] = _solve_slice(a11[t], a22[t], direction, rtol, maxiter)
    return eta, np.stack([qx, qy]), res


def solve_correctors(c: CellCoefficient, rtol=1e-10, maxiter=5000) -> CorrectorSet:
    etas, fluxes, residuals = zip(*(solve_cell_problem(c, i, rtol, maxiter) for i in (0, 1)))
    return CorrectorSet(np.stack(etas), np.stack(fluxes), np.stack(residuals))


def effective_tensor(c: CellCoefficient, eta: CorrectorSet) -> EffectiveTensor:
    """Average the cell fluxes over y and tau (trapezoidal = grid mean).

    Column ``j`` of each slice tensor is the mean flux of direction ``j``;
    with the face discretisation this is exactly the discrete form of
    ``<a_ij> - <a_im d_m eta_j>``.  The tau-average is symmetrised.
    """
    # flux[j, axis, t] -> slices[t, axis, j]
    slices = eta.flux.mean(axis=(-2, -1)).transpose(2, 1, 0)
    a_bar = slices.mean(axis=0)
    a_bar = 0.5 * (a_bar + a_bar.T)
    kappa = float(min_eigenvalue(a_bar[0, 0], a_bar[0, 1], a_bar[1, 1]))
    return EffectiveTensor(a_bar, kappa, slices=slices, correctors=eta)


def voigt_reuss_bounds(c: CellCoefficient):
    """Return ``(harmonic_mean, arithmetic_mean)`` 2x2 matrices of the samples."""
    return c.harmonic_mean(), c.arithmetic_mean()


def bracket_violation(a_bar, lower, upper):
    """Largest violation of ``lower <= a_bar <= upper`` in quadratic-form order
    (<= 0 means the bracket holds)."""
    lo = np.linalg.eigvalsh(0.5 * ((a_bar - lower) + (a_bar - lower).T)).min()
    hi = np.linalg.eigvalsh(0.5 * ((upper - a_bar) + (upper - a_bar).T)).min()
    return float(max(-lo, -hi))


class CellHomogenizer(BaseEstimator):
    """Estimator wrapper: ``fit`` a cell coefficient, read ``a_bar_``.

    After fitting, ``transform`` maps macroscopic gradients (rows of an
    ``(n, 2)`` array) to homogenized fluxes ``a_bar @ g``.
    """

    def __init__(self, rtol=1e-10, max_iter=5000, check_bounds=True):
        self.rtol = rtol
        self.max_iter = max_iter
        self.check_bounds = check_bounds

    def fit(self, X, y=None):
        if not isinstance(X, CellCoefficient):
            X = CellCoefficient(np.asarray(X, dtype=float))
        self.kappa_ = validate_coefficient(X)
        self.correctors_ = solve_correctors(X, self.rtol, self.max_iter)
        self.effective_ = effective_tensor(X, self.correctors_)
        self.a_bar_ = self.effective_.a_bar
        self.harmonic_, self.arithmetic_ = voigt_reuss_bounds(X)
        self.bracket_violation_ = bracket_violation(self.a_bar_, self.harmonic_,
                                                    self.arithmetic_)
        if self.check_bounds and self.bracket_violation_ > 1e-10 * np.abs(self.a_bar_).max():
            raise RuntimeError(f"Voigt-Reuss bracket violated by {self.bracket_violation_:.3e}")
        return self

    def transform(self, X):
        check_is_fitted(self, "a_bar_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[-1] != 2:
            raise ValueError("expected macroscopic gradients with 2 columns")
        return X @ self.a_bar_.T


def periodic_interp(field, y1, y2, tau, offset=(0.0, 0.0)):
    """Trilinear periodic interpolation of ``field[t, i, j]``.

    Node ``(t, i, j)`` sits at ``tau = -1/2 + t/nt`` and
    ``y = -1/2 + (i + offset[0])/n, -1/2 + (j + offset[1])/n``.
    """
    nt, n, _ = field.shape
    y1, y2, tau = np.broadcast_arrays(np.asarray(y1, float), np.asarray(y2, float),
                                      np.asarray(tau, float))
    s1 = np.mod((y1 + 0.5) * n - offset[0], n)
    s2 = np.mod((y2 + 0.5) * n - offset[1], n)
    i0 = np.floor(s1).astype(int)
    j0 = np.floor(s2).astype(int)
    w1 = s1 - i0
    w2 = s2 - j0
    i0 %= n
    j0 %= n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n

    def plane(t):
        return ((1 - w1) * (1 - w2) * field[t, i0, j0] + w1 * (1 - w2) * field[t, i1, j0]
                + (1 - w1) * w2 * field[t, i0, j1] + w1 * w2 * field[t, i1, j1])

    if nt == 1:
        return plane(np.zeros_like(i0))
    st = np.mod((tau + 0.5) * nt, nt)
    t0 = np.floor(st).astype(int)
    wt = st - t0
    t0 %= nt
    return (1 - wt) * plane(t0) + wt * plane((t0 + 1) % nt)


def corrector_slope(correctors: CorrectorSet, i, axis, y1, y2, tau):
    """Bilinear interpolation of ``d eta_i / d y_axis`` from its face grid."""
    offset = (0.5, 0.0) if axis == 0 else (0.0, 0.5)
    return periodic_interp(correctors.slope(i, axis), y1, y2, tau, offset)


def corrector_slope_from_flux(correctors: CorrectorSet, i, axis, y1, y2, tau, a_local):
    """``d eta_i / d y_axis = delta - q_axis / a_local`` with the flux interpolated.

    The cell flux is continuous across material interfaces, so this stays
    consistent with whatever local coefficient ``a_local`` the caller's
    discretisation uses at the evaluation points.
    """
    offset = (0.5, 0.0) if axis == 0 else (0.0, 0.5)
    q = periodic_interp(correctors.flux[i, axis], y1, y2, tau, offset)
    return (1.0 if i == axis else 0.0) - q / a_local


__all__ = [
    "CorrectorSet", "EffectiveTensor", "CellHomogenizer", "solve_cell_problem",
    "solve_correctors", "effective_tensor", "voigt_reuss_bounds", "bracket_violation",
    "periodic_interp", "corrector_slope", "corrector_slope_from_flux", "cell_nodes",
]
