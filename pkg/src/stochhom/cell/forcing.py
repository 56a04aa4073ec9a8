"""Oscillating forces f(y, tau, xi) and their cell averages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LipschitzViolation
from .coefficients import cell_nodes, wrap


class ForceField:
    """``f(y, tau, xi) = sum_r coef_r(y, tau) * response_r(xi)``.

    ``xi`` has a trailing axis of length 2 (the velocity vector); the
    coefficient arrays broadcast against ``xi[..., 0]``.  Subclasses list
    their terms; c1 and c2 are the declared Lipschitz and growth constants.
    """

    name = "abstract"
    c1 = 0.0
    c2 = 0.0

    def terms(self):
        return []

    def __call__(self, y1, y2, tau, xi):
        xi = np.asarray(xi, dtype=float)
        y1, y2, tau = wrap(y1), wrap(y2), wrap(tau)
        out = np.zeros(np.broadcast_shapes(np.shape(y1), np.shape(y2), np.shape(tau),
                                           xi.shape[:-1]) + (2,))
        for coef, response in self.terms():
            out += np.asarray(coef(y1, y2, tau))[..., None] * response(xi)
        return out

    @property
    def is_zero(self):
        return not self.terms()

    def params(self):
        return {k: v for k, v in vars(self).items() if not k.startswith("_")}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class NoForce(ForceField):
    name = "none"


def _one(y1, y2, tau):
    return np.ones(np.broadcast_shapes(np.shape(y1), np.shape(y2), np.shape(tau)))


class Saturation(ForceField):
    """``-amplitude (2 + cos 2 pi y2) tanh(xi)`` componentwise."""

    name = "saturation"

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)
        self.c1 = self.c2 = 3.0 * abs(self.amplitude)

    def terms(self):
        amp = self.amplitude
        return [(lambda y1, y2, tau: -amp * (2.0 + np.cos(2 * np.pi * y2)), np.tanh)]


class Damping(ForceField):
    """``-amplitude (2 + sin 2 pi y1)(1 + 1/2 sin 2 pi tau) xi``."""

    name = "damping"

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)
        self.c1 = self.c2 = 4.5 * abs(self.amplitude)

    def terms(self):
        amp = self.amplitude
        return [(lambda y1, y2, tau: -amp * (2.0 + np.sin(2 * np.pi * y1))
                 * (1.0 + 0.5 * np.sin(2 * np.pi * tau)), lambda xi: xi)]


class Uniform(ForceField):
    """``-amplitude tanh(xi)``; independent of (y, tau)."""

    name = "uniform"

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)
        self.c1 = self.c2 = abs(self.amplitude)

    def terms(self):
        amp = self.amplitude
        return [(lambda y1, y2, tau: -amp * _one(y1, y2, tau), np.tanh)]


FORCES = {cls.name: cls for cls in (NoForce, Saturation, Damping, Uniform)}


def make_force(name, **params):
    try:
        return FORCES[name](**params)
    except KeyError:
        raise ValueError(f"unknown force family {name!r}; choose from {sorted(FORCES)}") from None


def _quad_grid(res):
    y = cell_nodes(res)
    return np.meshgrid(y, y, y, indexing="ij")


@dataclass
class AveragedForce:
    """``xi -> integral over the cell of f(y, tau, xi)``, trapezoidal rule."""

    force: object
    quad_res: int = 64
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        self._weights = None
        if isinstance(self.force, ForceField):
            y1, y2, tau = _quad_grid(self.quad_res)
            self._weights = [float(np.mean(coef(y1, y2, tau) * np.ones_like(y1)))
                             for coef, _ in self.force.terms()]

    @property
    def is_zero(self):
        return self._weights is not None and all(w == 0.0 for w in self._weights)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self._weights is not None:
            out = np.zeros(xi.shape)
            for w, (_, response) in zip(self._weights, self.force.terms()):
                if w != 0.0:
                    out += w * response(xi)
            return out
        return self._brute(xi)

    def _brute(self, xi):
        # generic sampler: sum over tau-planes to bound memory
        y = cell_nodes(self.quad_res)
        Y1, Y2 = np.meshgrid(y, y, indexing="ij")
        flat = xi.reshape(-1, 2)
        acc = np.zeros_like(flat)
        for tau in y:
            vals = self.force(Y1[..., None], Y2[..., None], tau, flat[None, None, :, :])
            acc += vals.mean(axis=(0, 1))
        return (acc / self.quad_res).reshape(xi.shape)


def check_force_constants(f, c1, c2, n_samples=1000, seed=0, slack=0.01):
    """Randomised check of the Lipschitz (c1) and growth (c2) bounds; raises on violation.

    Returns the largest sampled Lipschitz and growth ratios.
    """
    rng = np.random.default_rng(seed)
    y1, y2, tau = rng.uniform(-0.5, 0.5, (3, n_samples))
    xi1 = rng.normal(scale=3.0, size=(n_samples, 2))
    xi2 = xi1 + rng.normal(scale=rng.uniform(1e-3, 2.0, (n_samples, 1)), size=(n_samples, 2))
    f1 = f(y1, y2, tau, xi1)
    f2 = f(y1, y2, tau, xi2)
    lip = np.linalg.norm(f1 - f2, axis=-1) / np.linalg.norm(xi1 - xi2, axis=-1)
    growth = np.linalg.norm(f1, axis=-1) / (1.0 + np.linalg.norm(xi1, axis=-1))
    lip_max, growth_max = float(lip.max()), float(growth.max())
    if lip_max > c1 * (1 + slack):
        raise LipschitzViolation(f"sampled Lipschitz ratio {lip_max:.4g} exceeds c1={c1:g}")
    if growth_max > c2 * (1 + slack):
        raise LipschitzViolation(f"sampled growth ratio {growth_max:.4g} exceeds c2={c2:g}")
    return lip_max, growth_max


def average_force(f, quad_res=64, c1=None, c2=None, check=True) -> AveragedForce:
    """Cell average of ``f``; constants default to the force's declared ones."""
    c1 = getattr(f, "c1", None) if c1 is None else c1
    c2 = getattr(f, "c2", None) if c2 is None else c2
    if check and c1 is not None and c2 is not None and not getattr(f, "is_zero", False):
        check_force_constants(f, c1, c2)
    return AveragedForce(f, quad_res, c1 or 0.0, c2 or 0.0)
