"""Space-time periodic cell coefficients a(y, tau) on the unit cell.

The cell is ``(-1/2, 1/2)^2 x (-1/2, 1/2)``.  Node ``k`` of an ``N``-point
axis sits at ``-1/2 + k/N``; every lookup wraps periodically.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NotElliptic, NotSymmetric, StochHomError

MAGIC = b"OSCC"
VERSION = 1


def cell_nodes(n):
    return -0.5 + np.arange(n) / n


def wrap(y):
    """Map ``y`` into the fundamental cell ``[-1/2, 1/2)``."""
    return np.mod(np.asarray(y, dtype=float) + 0.5, 1.0) - 0.5


def _pack(a11, a12, a22, shape):
    out = np.empty(shape + (2, 2))
    out[..., 0, 0] = np.broadcast_to(a11, shape)
    out[..., 0, 1] = np.broadcast_to(a12, shape)
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 1, 1] = np.broadcast_to(a22, shape)
    return out


class CoefficientFamily:
    """Analytic periodic coefficient; subclasses implement ``components``."""

    name = "abstract"

    def components(self, y1, y2, tau):
        raise NotImplementedError

    def evaluate(self, y1, y2, tau):
        """Return ``(a11, a12, a22)`` broadcast to the common input shape."""
        y1, y2, tau = np.broadcast_arrays(wrap(y1), wrap(y2), wrap(tau))
        a11, a12, a22 = self.components(y1, y2, tau)
        shape = y1.shape
        return (np.broadcast_to(a11, shape), np.broadcast_to(a12, shape),
                np.broadcast_to(a22, shape))

    @property
    def time_dependent(self):
        return False

    def params(self):
        return dict(vars(self))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class Constant(CoefficientFamily):
    name = "constant"

    def __init__(self, a11=1.0, a12=0.0, a22=1.0):
        self.a11, self.a12, self.a22 = float(a11), float(a12), float(a22)

    def components(self, y1, y2, tau):
        return self.a11, self.a12, self.a22


class Layered(CoefficientFamily):
    """Two-phase laminate: ``alpha`` for ``y_axis < 0``, ``beta`` otherwise."""

    name = "layered"

    def __init__(self, alpha=1.0, beta=4.0, axis=1):
        if axis not in (1, 2):
            raise ValueError("axis must be 1 or 2")
        self.alpha, self.beta, self.axis = float(alpha), float(beta), int(axis)

    def components(self, y1, y2, tau):
        y = y1 if self.axis == 1 else y2
        s = np.where(y < 0.0, self.alpha, self.beta)
        return s, 0.0, s


class Sinusoidal(CoefficientFamily):
    name = "sinusoidal"

    def __init__(self, mean=2.0, amplitude=1.0, axis=1):
        self.mean, self.amplitude, self.axis = float(mean), float(amplitude), int(axis)

    def components(self, y1, y2, tau):
        y = y1 if self.axis == 1 else y2
        s = self.mean + self.amplitude * np.sin(2 * np.pi * y)
        return s, 0.0, s


class Checkerboard(CoefficientFamily):
    name = "checkerboard"

    def __init__(self, alpha=1.0, beta=4.0):
        self.alpha, self.beta = float(alpha), float(beta)

    def components(self, y1, y2, tau):
        s = np.where((y1 < 0.0) == (y2 < 0.0), self.alpha, self.beta)
        return s, 0.0, s


class TimeModulated(CoefficientFamily):
    name = "time_modulated"

    def __init__(self, base=2.0, amplitude=1.0):
        self.base, self.amplitude = float(base), float(amplitude)

    @property
    def time_dependent(self):
        return True

    def components(self, y1, y2, tau):
        s = self.base + self.amplitude * np.sin(2 * np.pi * tau)
        return s, 0.0, s


class Separable(CoefficientFamily):
    """``(a0 + a1 sin 2 pi y1) (b0 + b1 sin 2 pi tau) I``."""

    name = "separable"

    def __init__(self, a0=2.0, a1=1.0, b0=2.0, b1=0.5):
        self.a0, self.a1, self.b0, self.b1 = map(float, (a0, a1, b0, b1))

    @property
    def time_dependent(self):
        return self.b1 != 0.0

    def components(self, y1, y2, tau):
        s = (self.a0 + self.a1 * np.sin(2 * np.pi * y1)) * \
            (self.b0 + self.b1 * np.sin(2 * np.pi * tau))
        return s, 0.0, s


class Scaled(CoefficientFamily):
    """Multiply another family by a positive constant (a viscosity scale)."""

    name = "scaled"

    def __init__(self, base, scale):
        self.base, self.scale = base, float(scale)

    @property
    def time_dependent(self):
        return self.base.time_dependent

    def components(self, y1, y2, tau):
        a11, a12, a22 = self.base.components(y1, y2, tau)
        return self.scale * a11, self.scale * a12, self.scale * a22


FAMILIES = {cls.name: cls for cls in
            (Constant, Layered, Sinusoidal, Checkerboard, TimeModulated, Separable)}


def make_family(name, scale=1.0, **params):
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown coefficient family {name!r}; "
                         f"choose from {sorted(FAMILIES)}") from None
    fam = cls(**params)
    return fam if scale == 1.0 else Scaled(fam, scale)


@dataclass
class CellCoefficient:
    """Sampled symmetric coefficient field on an ``n_tau x n_y x n_y`` grid.

    ``samples[t, i, j]`` is the 2x2 matrix at ``(y1, y2, tau) =
    (nodes[i], nodes[j], tau_nodes[t])``.  ``family`` is kept when the
    field came from an analytic family so that flow solvers can evaluate
    it off-grid; without it, off-grid lookups use the nearest node.
    """

    samples: np.ndarray
    kappa: float | None = None
    family: CoefficientFamily | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 5 or self.samples.shape[-2:] != (2, 2):
            raise ValueError("samples must have shape (n_tau, n_y, n_y, 2, 2)")
        if self.samples.shape[1] != self.samples.shape[2]:
            raise ValueError("cell grid must be square in y")

    @classmethod
    def from_family(cls, family, n_y, n_tau=None, kappa=None):
        if n_tau is None:
            n_tau = 8 if family.time_dependent else 1
        y = cell_nodes(n_y)
        tau = cell_nodes(n_tau)
        T, Y1, Y2 = np.meshgrid(tau, y, y, indexing="ij")
        a11, a12, a22 = family.evaluate(Y1, Y2, T)
        return cls(_pack(a11, a12, a22, T.shape), kappa=kappa, family=family)

    @property
    def d(self):
        return 2

    @property
    def n_y(self):
        return self.samples.shape[1]

    @property
    def n_tau(self):
        return self.samples.shape[0]

    @property
    def time_dependent(self):
        if self.family is not None:
            return self.family.time_dependent
        return self.n_tau > 1 and not np.all(self.samples == self.samples[:1])

    def components(self):
        s = self.samples
        return s[..., 0, 0], s[..., 0, 1], s[..., 1, 1]

    def evaluate(self, y1, y2, tau):
        """``(a11, a12, a22)`` at arbitrary (periodically wrapped) points."""
        if self.family is not None:
            return self.family.evaluate(y1, y2, tau)
        y1, y2, tau = np.broadcast_arrays(y1, y2, tau)
        n, nt = self.n_y, self.n_tau
        i = np.rint((wrap(y1) + 0.5) * n).astype(int) % n
        j = np.rint((wrap(y2) + 0.5) * n).astype(int) % n
        t = np.rint((wrap(tau) + 0.5) * nt).astype(int) % nt
        a11, a12, a22 = self.components()
        return a11[t, i, j], a12[t, i, j], a22[t, i, j]

    def arithmetic_mean(self):
        return self.samples.mean(axis=(0, 1, 2))

    def harmonic_mean(self):
        return np.linalg.inv(np.linalg.inv(self.samples).mean(axis=(0, 1, 2)))


def min_eigenvalue(a11, a12, a22):
    half_tr = 0.5 * (a11 + a22)
    return half_tr - np.hypot(0.5 * (a11 - a22), a12)


def validate_coefficient(c: CellCoefficient, sym_tol=1e-12) -> float:
    """Check symmetry and uniform ellipticity; return the measured kappa.

    ``kappa`` is the minimum over nodes of the smallest eigenvalue.  A
    declared ``c.kappa`` larger than the measured one is rejected.
    """
    s = c.samples
    if min(s.shape[:3]) < 1 or s.shape[1] < 2:
        raise StochHomError("cell grid needs at least 2 nodes per y axis")
    asym = np.max(np.abs(s[..., 0, 1] - s[..., 1, 0]))
    if not np.isfinite(s).all():
        raise NotElliptic("coefficient samples contain non-finite values")
    if asym > sym_tol:
        raise NotSymmetric(f"max |a12 - a21| = {asym:.3e} exceeds {sym_tol:g}")
    kappa = float(np.min(min_eigenvalue(s[..., 0, 0], s[..., 0, 1], s[..., 1, 1])))
    if kappa <= 0.0:
        raise NotElliptic(f"smallest eigenvalue {kappa:.6g} is not positive")
    if c.kappa is not None and c.kappa > kappa * (1 + 1e-12):
        raise NotElliptic(f"declared kappa={c.kappa:g} exceeds measured "
                          f"ellipticity {kappa:.6g}")
    return kappa


def write_coefficient(path, c: CellCoefficient):
    """Write the OSCC binary format (little endian).

    Header: ``b"OSCC"``, then u32 version, d, N_y, N_tau.  Body: for every
    node in row-major ``[tau, i1, i2]`` order, the float64 triple
    ``a11, a12, a22``.
    """
    a11, a12, a22 = c.components()
    body = np.stack([a11, a12, a22], axis=-1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", VERSION, 2, c.n_y, c.n_tau))
        fh.write(body.tobytes(order="C"))


def read_coefficient(path, kappa=None) -> CellCoefficient:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise StochHomError(f"{path}: not an OSCC coefficient file")
    version, d, n_y, n_tau = struct.unpack_from("<4I", data, 4)
    if version != VERSION or d != 2:
        raise StochHomError(f"{path}: unsupported version {version} / d={d}")
    body = np.frombuffer(data, dtype="<f8", offset=20)
    if body.size != n_tau * n_y * n_y * 3:
        raise StochHomError(f"{path}: truncated body")
    body = body.reshape(n_tau, n_y, n_y, 3)
    shape = body.shape[:3]
    return CellCoefficient(_pack(body[..., 0], body[..., 1], body[..., 2], shape),
                           kappa=kappa)
