"""Staggered (MAC) grid on the unit square with no-slip walls.

Array layout, indexed ``[i, j]`` with ``i`` along x:

* scalars (density, pressure) at cell centres, shape ``(nx, ny)``;
* ``u`` on vertical faces ``x = i hx``, shape ``(nx + 1, ny)``;
* ``v`` on horizontal faces ``y = j hy``, shape ``(nx, ny + 1)``;
* corner quantities at ``(i hx, j hy)``, shape ``(nx + 1, ny + 1)``.

Wall-normal face values are exactly zero; tangential no-slip is imposed
through antisymmetric ghost values.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import IncompatibleRHS, NotElliptic, SolverDiverged, StochHomError
from .linalg import pcg


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs at least 8 cells per direction")

    @property
    def hx(self):
        return 1.0 / self.nx

    @property
    def hy(self):
        return 1.0 / self.ny

    @property
    def h(self):
        return max(self.hx, self.hy)

    @property
    def cell_area(self):
        return self.hx * self.hy

    def centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_points(self):
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_points(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def corners(self):
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")


@dataclass
class Velocity:
    """Staggered velocity; supports ``+``, ``-`` and scalar ``*``."""

    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    def copy(self):
        return Velocity(self.u.copy(), self.v.copy())

    def __add__(self, other):
        return Velocity(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return Velocity(self.u - other.u, self.v - other.v)

    def __mul__(self, s):
        return Velocity(self.u * s, self.v * s)

    __rmul__ = __mul__

    def max_abs(self):
        return max(np.abs(self.u).max(), np.abs(self.v).max())

    def dot(self, other, grid):
        return grid.cell_area * (np.vdot(self.u, other.u) + np.vdot(self.v, other.v))

    def norm(self, grid):
        return float(np.sqrt(self.dot(self, grid)))

    def enforce_walls(self):
        self.u[0, :] = self.u[-1, :] = 0.0
        self.v[:, 0] = self.v[:, -1] = 0.0
        return self


def from_stream(grid, psi):
    """Discrete curl of a corner stream function; divergence free and
    wall-normal zero whenever ``psi`` vanishes on the boundary."""
    u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    v = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return Velocity(u, v).enforce_walls()


def divergence(grid, w: Velocity):
    return (w.u[1:, :] - w.u[:-1, :]) / grid.hx + (w.v[:, 1:] - w.v[:, :-1]) / grid.hy


def gradient(grid, p):
    """Face-normal gradient of a cell-centred scalar; wall faces stay zero."""
    g = Velocity.zeros(grid)
    g.u[1:-1, :] = (p[1:, :] - p[:-1, :]) / grid.hx
    g.v[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / grid.hy
    return g


def neumann_laplacian(grid, p):
    return divergence(grid, gradient(grid, p))


def _neumann_symbol(grid):
    kx = np.arange(grid.nx)
    ky = np.arange(grid.ny)
    lx = (2.0 * np.cos(np.pi * kx / grid.nx) - 2.0) / grid.hx ** 2
    ly = (2.0 * np.cos(np.pi * ky / grid.ny) - 2.0) / grid.hy ** 2
    sym = lx[:, None] + ly[None, :]
    return sym


def _dct_solve(grid, rhs):
    sym = _neumann_symbol(grid)
    sym[0, 0] = 1.0
    rh = fft.dctn(rhs, type=2, norm="ortho")
    rh /= sym
    rh[0, 0] = 0.0
    return fft.idctn(rh, type=2, norm="ortho")


def pressure_poisson_solve(grid, rhs, rtol=1e-10):
    """Solve ``lap(p) = rhs`` with homogeneous Neumann walls; mean-zero ``p``.

    Direct solve in the discrete cosine basis, which diagonalises the
    cell-centred Neumann Laplacian.
    """
    rhs = np.asarray(rhs, dtype=float)
    scale = np.linalg.norm(rhs)
    if scale == 0.0:
        return np.zeros_like(rhs)
    if abs(rhs.mean()) * np.sqrt(rhs.size) > 1e-10 * scale:
        raise IncompatibleRHS(f"rhs mean {rhs.mean():.3e} violates Neumann compatibility")
    p = _dct_solve(grid, rhs - rhs.mean())
    res = np.linalg.norm(neumann_laplacian(grid, p) - (rhs - rhs.mean()))
    if res > rtol * scale:
        raise SolverDiverged(f"Poisson residual {res / scale:.3e} above {rtol:g}")
    return p


def leray_project(grid, w: Velocity):
    """Unweighted discrete Leray projection ``w - grad p``; also returns ``p``."""
    d = divergence(grid, w)
    d -= d.mean()  # telescoping leaves only roundoff here
    if not np.any(d):
        return w.copy(), np.zeros((grid.nx, grid.ny))
    p = _dct_solve(grid, d)
    out = w - gradient(grid, p)
    return out.enforce_walls(), p


def weighted_project(grid, w: Velocity, beta_u, beta_v, atol=1e-11, maxiter=500):
    """Project with weight ``beta = 1/rho`` on faces: ``w - beta grad(phi)``
    where ``div(beta grad phi) = div w``.

    This is the projection that is orthogonal in the density-weighted
    inner product.  Solved by CG, preconditioned by the constant-weight
    cosine solve; iterates until ``|div|_inf <= atol * max(1, |w|_inf/h)``.
    """
    d = divergence(grid, w)
    d -= d.mean()
    if not np.any(d):
        return w.copy(), np.zeros((grid.nx, grid.ny))
    bmean = 0.5 * (beta_u[1:-1].mean() + beta_v[:, 1:-1].mean())

    def apply(phi):
        g = gradient(grid, phi)
        g.u *= beta_u
        g.v *= beta_v
        return -divergence(grid, g)

    def precond(r):
        return -_dct_solve(grid, r) / bmean

    def project(z):
        return z - z.mean()

    target = atol * max(1.0, w.max_abs() / grid.h)
    rtol = target / (np.abs(d).max() * np.sqrt(d.size))
    phi, _ = pcg(apply, -d, precond, rtol=max(min(rtol, 1e-10), 1e-14), maxiter=maxiter,
                 project=project)
    g = gradient(grid, phi)
    out = Velocity(w.u - beta_u * g.u, w.v - beta_v * g.v).enforce_walls()
    return out, phi


# --- variable-coefficient diffusion -------------------------------------


def _harm(a, b):
    return 2.0 * a * b / (a + b)


@dataclass
class FaceCoefficients:
    """Diagonal diffusion coefficients at every flux location.

    A flux along direction ``d`` that sits between cells separated along
    ``d`` uses the harmonic mean of those cells; cells adjacent across
    ``d`` are combined arithmetically.

    * ``ux`` (cell centres) and ``uy`` (corners): x- and y-fluxes of ``u``;
    * ``vx`` (corners) and ``vy`` (cell centres): x- and y-fluxes of ``v``.
    """

    ux: np.ndarray
    uy: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    @classmethod
    def from_cells(cls, a11, a22):
        a11 = np.asarray(a11, dtype=float)
        a22 = np.asarray(a22, dtype=float)
        if np.min(a11) <= 0 or np.min(a22) <= 0:
            raise NotElliptic("diffusion coefficients must be positive")
        # y-flux of u at corners: harmonic across rows, arithmetic across columns
        hy = np.concatenate([a22[:, :1], _harm(a22[:, :-1], a22[:, 1:]), a22[:, -1:]], axis=1)
        uy = np.concatenate([hy[:1], 0.5 * (hy[:-1] + hy[1:]), hy[-1:]], axis=0)
        hx = np.concatenate([a11[:1], _harm(a11[:-1], a11[1:]), a11[-1:]], axis=0)
        vx = np.concatenate([hx[:, :1], 0.5 * (hx[:, :-1] + hx[:, 1:]), hx[:, -1:]], axis=1)
        return cls(a11, uy, vx, a22)

    @classmethod
    def constant(cls, grid, a11, a22):
        nx, ny = grid.nx, grid.ny
        return cls(np.full((nx, ny), float(a11)), np.full((nx + 1, ny + 1), float(a22)),
                   np.full((nx + 1, ny + 1), float(a11)), np.full((nx, ny), float(a22)))

    def means(self):
        return 0.5 * (self.ux.mean() + self.vx.mean()), 0.5 * (self.uy.mean() + self.vy.mean())


def diffuse_u(grid, u, a: FaceCoefficients):
    """``-div(a grad u)`` at interior u-faces (wall rows returned as zero)."""
    out = np.zeros_like(u)
    fx = a.ux * (u[1:, :] - u[:-1, :]) / grid.hx
    ext = np.concatenate([-u[:, :1], u, -u[:, -1:]], axis=1)
    fy = a.uy * (ext[:, 1:] - ext[:, :-1]) / grid.hy
    out[1:-1, :] = -((fx[1:, :] - fx[:-1, :]) / grid.hx + (fy[1:-1, 1:] - fy[1:-1, :-1]) / grid.hy)
    return out


def diffuse_v(grid, v, a: FaceCoefficients):
    out = np.zeros_like(v)
    fy = a.vy * (v[:, 1:] - v[:, :-1]) / grid.hy
    ext = np.concatenate([-v[:1, :], v, -v[-1:, :]], axis=0)
    fx = a.vx * (ext[1:, :] - ext[:-1, :]) / grid.hx
    out[:, 1:-1] = -((fy[:, 1:] - fy[:, :-1]) / grid.hy + (fx[1:, 1:-1] - fx[:-1, 1:-1]) / grid.hx)
    return out


def variable_diffusion_apply(grid, w: Velocity, a: FaceCoefficients):
    """Discrete ``-div(a grad w)`` applied to each velocity component."""
    return Velocity(diffuse_u(grid, w.u, a), diffuse_v(grid, w.v, a))


def diffusion_energy(grid, w: Velocity, a: FaceCoefficients):
    """``<A w, w>``; equals the sum of ``a |face gradient|^2`` (SBP identity)."""
    return float(variable_diffusion_apply(grid, w, a).dot(w, grid))


def _dst_symbols(n, h, kind):
    k = np.arange(1, n + 1 if kind == 2 else n)
    return (2.0 - 2.0 * np.cos(np.pi * k / n)) / h ** 2


class HelmholtzSolver:
    """Solve ``(diag/dt + A) w = rhs`` per component by PCG.

    The preconditioner is the exact inverse of the constant-coefficient
    operator in the sine basis matching the wall conditions of each
    component (DST-I across Dirichlet nodes, DST-II across ghost walls).
    """

    def __init__(self, grid, rtol=1e-10, maxiter=1000, error=SolverDiverged):
        self.grid = grid
        self.rtol = rtol
        self.maxiter = maxiter
        self.error = error
        nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
        self._lux = _dst_symbols(nx, hx, 1)[:, None]  # u interior in x: nodes 1..nx-1
        self._luy = _dst_symbols(ny, hy, 2)[None, :]
        self._lvx = _dst_symbols(nx, hx, 2)[:, None]
        self._lvy = _dst_symbols(ny, hy, 1)[None, :]
        self.iterations = []

    def _precond_u(self, c0, a1, a2):
        sym = c0 + a1 * self._lux + a2 * self._luy

        def pre(r):
            out = np.zeros_like(r)
            z = fft.dst(fft.dst(r[1:-1, :], type=1, axis=0, norm="ortho"), type=2, axis=1,
                        norm="ortho")
            z /= sym
            out[1:-1, :] = fft.idst(fft.idst(z, type=2, axis=1, norm="ortho"), type=1, axis=0,
                                    norm="ortho")
            return out
        return pre

    def _precond_v(self, c0, a1, a2):
        sym = c0 + a1 * self._lvx + a2 * self._lvy

        def pre(r):
            out = np.zeros_like(r)
            z = fft.dst(fft.dst(r[:, 1:-1], type=2, axis=0, norm="ortho"), type=1, axis=1,
                        norm="ortho")
            z /= sym
            out[:, 1:-1] = fft.idst(fft.idst(z, type=1, axis=1, norm="ortho"), type=2, axis=0,
                                    norm="ortho")
            return out
        return pre

    def solve(self, diag: Velocity, a: FaceCoefficients, rhs: Velocity, x0=None):
        """``diag`` holds the face mass terms (e.g. rho / dt)."""
        grid = self.grid
        a1, a2 = a.means()
        self.iterations = []
        out = []
        for comp, dgn, op, pre in (
                ("u", diag.u, diffuse_u, self._precond_u(diag.u[1:-1].mean(), a1, a2)),
                ("v", diag.v, diffuse_v, self._precond_v(diag.v[:, 1:-1].mean(), a1, a2))):
            b = getattr(rhs, comp).copy()
            if comp == "u":
                b[0] = b[-1] = 0.0
            else:
                b[:, 0] = b[:, -1] = 0.0

            def apply(w, dgn=dgn, op=op, comp=comp):
                r = dgn * w + op(grid, w, a)
                if comp == "u":
                    r[0] = r[-1] = 0.0
                else:
                    r[:, 0] = r[:, -1] = 0.0
                return r

            guess = None if x0 is None else getattr(x0, comp)
            x, info = pcg(apply, b, pre, x0=guess, rtol=self.rtol, maxiter=self.maxiter,
                          error=self.error)
            self.iterations.append(info.iterations)
            out.append(x)
        return Velocity(*out).enforce_walls()


# --- interpolation helpers -----------------------------------------------


def v_at_u(grid, w: Velocity):
    """Average v to u-face locations (4-point), zero on the x-walls."""
    vc = 0.5 * (w.v[:, 1:] + w.v[:, :-1])  # cell centres
    out = np.zeros_like(w.u)
    out[1:-1] = 0.5 * (vc[1:] + vc[:-1])
    return out


def u_at_v(grid, w: Velocity):
    uc = 0.5 * (w.u[1:, :] + w.u[:-1, :])
    out = np.zeros_like(w.v)
    out[:, 1:-1] = 0.5 * (uc[:, 1:] + uc[:, :-1])
    return out


def face_density(rho):
    """Arithmetic face averages of a cell-centred density; walls copy the cell."""
    ru = np.concatenate([rho[:1], 0.5 * (rho[1:] + rho[:-1]), rho[-1:]], axis=0)
    rv = np.concatenate([rho[:, :1], 0.5 * (rho[:, 1:] + rho[:, :-1]), rho[:, -1:]], axis=1)
    return Velocity(ru, rv)


def weighted_energy(grid, rho_f: Velocity, w: Velocity):
    return float(grid.cell_area * (np.sum(rho_f.u * w.u ** 2) + np.sum(rho_f.v * w.v ** 2)))


# --- field snapshot format -------------------------------------------------

SNAPSHOT_MAGIC = b"OSCF"
SNAPSHOT_VERSION = 1
ROLE_TAGS = {"density": 0, "pressure": 1, "u": 2, "v": 3, "corrector": 4, "scalar": 5}
_ROLE_NAMES = {v: k for k, v in ROLE_TAGS.items()}


def write_snapshot(path, role, data, time=0.0):
    """OSCF: magic, u32 version, u32 role tag, u32 nx, u32 ny, f64 time, then
    the array as little-endian float64 in C order of its ``[i, j]`` shape.

    ``nx, ny`` are the cell counts of the scalar grid, so a ``u`` array of
    shape ``(nx + 1, ny)`` is stored with header ``nx``.
    """
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ValueError("snapshots hold 2D arrays")
    nx, ny = data.shape
    if role == "u":
        nx -= 1
    elif role == "v":
        ny -= 1
    if nx < 1 or ny < 1:
        raise ValueError(f"array shape {data.shape} does not fit role {role!r}")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<4Id", SNAPSHOT_VERSION, ROLE_TAGS[role], nx, ny, float(time)))
        fh.write(data.tobytes(order="C"))


def read_snapshot(path):
    """Return ``(role, time, array)``; the array shape follows the role."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise StochHomError(f"{path}: not an OSCF snapshot")
    version, tag, nx, ny, time = struct.unpack_from("<4Id", raw, 4)
    if version != SNAPSHOT_VERSION:
        raise StochHomError(f"{path}: unsupported snapshot version {version}")
    role = _ROLE_NAMES[tag]
    shape = {"u": (nx + 1, ny), "v": (nx, ny + 1)}.get(role, (nx, ny))
    arr = np.frombuffer(raw, dtype="<f8", offset=28).reshape(shape).copy()
    return role, time, arr
