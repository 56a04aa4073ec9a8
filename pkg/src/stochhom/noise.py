"""Truncated Q-Wiener increments and the noise intensity operator.

``W = sum_k sqrt(lambda_k) psi_k W_k`` with ``lambda_k = lambda0 k^(-2 gamma)``
and divergence-free mode shapes ``psi_k`` obtained as discrete curls of
``sin(j pi x) sin(l pi y)`` stream functions.

Increments are counter-based: the normal variate for (seed, mode k, step n)
is a fixed function of those three integers (Philox keyed by (seed, k),
raw output index n, inverse-CDF transform), so any sub-path can be
regenerated independently.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import IndivisibleSteps, LipschitzViolation, StochHomError
from .mac import Grid2D, Velocity, from_stream, leray_project, v_at_u, u_at_v

PATH_MAGIC = b"OSCW"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSpec:
    n_modes: int = 16
    gamma: float = 1.5
    lambda0: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one noise mode")
        if self.gamma <= 0.5:
            raise ValueError("gamma must exceed 1/2 for a trace-class covariance")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")

    @property
    def eigenvalues(self):
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return self.lambda0 * k ** (-2.0 * self.gamma)

    def with_seed(self, seed):
        return NoiseSpec(self.n_modes, self.gamma, self.lambda0, int(seed) & _MASK64)

    def digest(self) -> bytes:
        text = f"NoiseSpec(K={self.n_modes},gamma={self.gamma!r},lambda0={self.lambda0!r}," \
               f"seed={self.seed})"
        return hashlib.sha256(text.encode()).digest()


def mode_indices(n_modes):
    """Wave-number pairs ordered by ``j^2 + l^2``, then ``j``."""
    r = int(np.ceil(np.sqrt(n_modes))) + 2
    pairs = sorted(((j, l) for j in range(1, r + 1) for l in range(1, r + 1)),
                   key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0]))
    return pairs[:n_modes]


def mode_shapes(grid: Grid2D, n_modes):
    """Unit-norm (discrete L2) divergence-free fields, zero normal at walls."""
    X, Y = grid.corners()
    modes = []
    for j, l in mode_indices(n_modes):
        psi = np.sin(j * np.pi * X) * np.sin(l * np.pi * Y)
        psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
        w = from_stream(grid, psi)
        modes.append(w * (1.0 / w.norm(grid)))
    return modes


def _key(seed, k):
    return np.array([int(seed) & _MASK64, int(k)], dtype=np.uint64)


def _normals(seed, k, n0, n1):
    """Standard normals for raw indices ``n0 <= n < n1`` of stream (seed, k)."""
    bg = np.random.Philox(key=_key(seed, k), counter=n0 // 4)
    skip = n0 % 4
    raw = bg.random_raw(n1 - n0 + skip)[skip:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


@dataclass
class NoisePath:
    increments: np.ndarray  # (K, n_steps), units sqrt(time)
    dt: float
    spec: NoiseSpec | None = None
    first_step: int = 0

    @property
    def n_modes(self):
        return self.increments.shape[0]

    @property
    def n_steps(self):
        return self.increments.shape[1]

    def step(self, n):
        return self.increments[:, n]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<d", self.dt))
        h.update(np.ascontiguousarray(self.increments, dtype="<f8").tobytes())
        return h.hexdigest()


def sample_path(spec: NoiseSpec, n_steps, dt, first_step=0) -> NoisePath:
    """Increments ``dW_k^n ~ N(0, dt)`` for steps ``first_step .. +n_steps``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    inc = np.empty((spec.n_modes, n_steps))
    for k in range(spec.n_modes):
        inc[k] = _normals(spec.seed, k, first_step, first_step + n_steps)
    inc *= np.sqrt(dt)
    return NoisePath(inc, float(dt), spec, first_step)


def zero_path(n_modes, n_steps, dt) -> NoisePath:
    return NoisePath(np.zeros((n_modes, n_steps)), float(dt))


def coarsen_path(path: NoisePath, factor) -> NoisePath:
    """Sum increments over consecutive windows of ``factor`` steps."""
    factor = int(factor)
    if factor < 1 or path.n_steps % factor:
        raise IndivisibleSteps(f"{path.n_steps} steps not divisible by {factor}")
    inc = path.increments.reshape(path.n_modes, -1, factor).sum(axis=-1)
    return NoisePath(inc, path.dt * factor, path.spec, path.first_step // factor)


def write_path(fh_or_path, path: NoisePath):
    """OSCW: magic, 32-byte spec digest, u32 K, u32 n_steps, f64 dt, then
    K x n_steps little-endian float64 increments (row = mode)."""
    digest = path.spec.digest() if path.spec is not None else bytes(32)
    payload = PATH_MAGIC + digest + struct.pack("<2Id", path.n_modes, path.n_steps, path.dt) \
        + np.ascontiguousarray(path.increments, dtype="<f8").tobytes()
    if hasattr(fh_or_path, "write"):
        fh_or_path.write(payload)
    else:
        with open(fh_or_path, "wb") as fh:
            fh.write(payload)


def read_path(path_like):
    with open(path_like, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PATH_MAGIC:
        raise StochHomError(f"{path_like}: not an OSCW noise path")
    digest = raw[4:36]
    k, n, dt = struct.unpack_from("<2Id", raw, 36)
    inc = np.frombuffer(raw, dtype="<f8", offset=52).reshape(k, n).copy()
    return NoisePath(inc, dt), digest


# --- noise intensity operator ----------------------------------------------


def _speed(grid, w: Velocity):
    su = np.sqrt(w.u ** 2 + v_at_u(grid, w) ** 2)
    sv = np.sqrt(w.v ** 2 + u_at_v(grid, w) ** 2)
    return su, sv


@dataclass
class GOperator:
    """``g_k(u) = psi_k * s(u)`` with ``s = sigma |u| / (1 + |u|)`` pointwise
    (``kind="multiplicative"``) or ``g_k(u) = sigma psi_k``
    (``kind="additive"``).  ``c3`` / ``c4`` are the declared Lipschitz and
    growth constants for ``sum_k lambda_k |g_k(u)|^2``."""

    kind: str = "multiplicative"
    sigma: float = 0.1
    c3: float | None = None
    c4: float | None = None
    _modes: list = field(default=None, repr=False, compare=False)
    _grid: Grid2D | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("multiplicative", "additive", "none"):
            raise ValueError(f"unknown g-operator kind {self.kind!r}")

    def bind(self, grid, spec: NoiseSpec):
        if self._grid != grid or self._modes is None or len(self._modes) != spec.n_modes:
            self._modes = mode_shapes(grid, spec.n_modes)
            self._grid = grid
        return self

    def modes(self, grid, spec):
        return self.bind(grid, spec)._modes

    @property
    def is_zero(self):
        return self.kind == "none" or self.sigma == 0.0

    def safe_constants(self, grid, spec):
        """Constants implied by the construction (sup-norm of the modes)."""
        lam = spec.eigenvalues
        if self.kind == "additive":
            return 0.0, float(self.sigma ** 2 * lam.sum())
        sup = np.array([max(np.abs(m.u).max(), np.abs(m.v).max()) for m in self.modes(grid, spec)])
        # |psi_k|^2 <= 2 sup^2 since the two components live on different faces
        c = float(self.sigma ** 2 * np.sum(lam * 2.0 * sup ** 2))
        return c, c

    def shape(self, grid, w: Velocity):
        """Pointwise factor s(u) on u- and v-faces."""
        if self.kind == "additive":
            return 1.0, 1.0
        su, sv = _speed(grid, w)
        return su / (1.0 + su), sv / (1.0 + sv)

    def fields(self, grid, spec, w: Velocity):
        """All ``g_k(w)`` before projection."""
        if self.is_zero:
            return [Velocity.zeros(grid) for _ in range(spec.n_modes)]
        fu, fv = self.shape(grid, w)
        return [Velocity(self.sigma * m.u * fu, self.sigma * m.v * fv)
                for m in self.modes(grid, spec)]

    def hs_norm_sq(self, grid, spec, w: Velocity):
        lam = spec.eigenvalues
        return float(sum(l * g.dot(g, grid) for l, g in zip(lam, self.fields(grid, spec, w))))


def apply_noise(g: GOperator, grid, spec: NoiseSpec, w: Velocity, dW):
    """Leray projection of ``sum_k sqrt(lambda_k) g_k(w) dW_k``."""
    dW = np.asarray(dW, dtype=float)
    out = Velocity.zeros(grid)
    if g.is_zero or not np.any(dW):
        return out
    for s, gk, dw in zip(np.sqrt(spec.eigenvalues), g.fields(grid, spec, w), dW):
        if dw != 0.0:
            out.u += (s * dw) * gk.u
            out.v += (s * dw) * gk.v
    if g.kind == "additive":
        # every mode is already discretely divergence free
        return out.enforce_walls()
    projected, _ = leray_project(grid, out)
    return projected


def check_g_constants(g: GOperator, grid, spec, n_pairs=1000, seed=0, slack=1e-9):
    """Randomised check of the Lipschitz (c3) and growth (c4) conditions.

    Returns the largest sampled ratios; raises when a declared constant
    is exceeded.
    """
    rng = np.random.default_rng(seed)
    c3 = g.c3 if g.c3 is not None else g.safe_constants(grid, spec)[0]
    c4 = g.c4 if g.c4 is not None else g.safe_constants(grid, spec)[1]
    lam = spec.eigenvalues
    worst_lip = worst_growth = 0.0
    for _ in range(n_pairs):
        scale = 10.0 ** rng.uniform(-2, 1)
        w1 = Velocity(rng.normal(scale=scale, size=(grid.nx + 1, grid.ny)),
                      rng.normal(scale=scale, size=(grid.nx, grid.ny + 1))).enforce_walls()
        w2 = w1 + Velocity(rng.normal(scale=scale * 0.3, size=w1.u.shape),
                           rng.normal(scale=scale * 0.3, size=w1.v.shape)).enforce_walls()
        g1 = g.fields(grid, spec, w1)
        g2 = g.fields(grid, spec, w2)
        diff = sum(l * (a - b).dot(a - b, grid) for l, a, b in zip(lam, g1, g2))
        dist = (w1 - w2).dot(w1 - w2, grid)
        grow = sum(l * a.dot(a, grid) for l, a in zip(lam, g1))
        worst_lip = max(worst_lip, diff / dist)
        worst_growth = max(worst_growth, grow / (1.0 + w1.dot(w1, grid)))
    if worst_lip > c3 * (1 + slack) and g.kind != "additive":
        raise LipschitzViolation(f"sampled g Lipschitz ratio {worst_lip:.4g} exceeds c3={c3:g}")
    if worst_growth > c4 * (1 + slack):
        raise LipschitzViolation(f"sampled g growth ratio {worst_growth:.4g} exceeds c4={c4:g}")
    return worst_lip, worst_growth
