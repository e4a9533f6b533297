"""Uniform 2D MAC grid: layout, discrete operators and the divergence-free projection.

Layout on the box ``(0, Lx) x (0, Ly)`` with ``nx x ny`` cells:

* scalars (theta, psi, p, pi) live at cell centres, arrays of shape ``(nx, ny)``;
* the x-velocity lives on vertical faces, shape ``(nx + 1, ny)``;
* the y-velocity lives on horizontal faces, shape ``(nx, ny + 1)``.

Boundary faces carry the (zero) normal velocity. Solvers work on *packed*
velocity vectors holding only interior faces, ``u[1:-1, :]`` followed by
``v[:, 1:-1]``, so that ``div = -grad^T`` holds exactly as matrices.
"""
from __future__ import annotations

import functools
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PoissonNoConverge


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nt: int
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nt) < 1:
            raise ValueError("nx, ny, nt must be positive")
        if min(self.Lx, self.Ly, self.T) <= 0:
            raise ValueError("Lx, Ly, T must be positive")

    N = 2

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def cell_volume(self):
        return self.hx * self.hy

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def ncell(self):
        return self.nx * self.ny

    @property
    def nu_int(self):
        return (self.nx - 1) * self.ny

    @property
    def nv_int(self):
        return self.nx * (self.ny - 1)

    @property
    def nvel(self):
        return self.nu_int + self.nv_int

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_faces(self):
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_faces(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def refined(self, factor=2):
        return GridSpec(self.nx * factor, self.ny * factor, self.nt * factor,
                        self.Lx, self.Ly, self.T)

    # packing -----------------------------------------------------------
    def pack(self, u, v):
        return np.concatenate([np.asarray(u)[1:-1, :].ravel(),
                               np.asarray(v)[:, 1:-1].ravel()])

    def unpack(self, vec):
        u = np.zeros((self.nx + 1, self.ny))
        v = np.zeros((self.nx, self.ny + 1))
        u[1:-1, :] = vec[: self.nu_int].reshape(self.nx - 1, self.ny)
        v[:, 1:-1] = vec[self.nu_int:].reshape(self.nx, self.ny - 1)
        return u, v


# ---------------------------------------------------------------------------
# field operators on full arrays

def divergence(u, v, grid: GridSpec):
    """Cell-centred MAC divergence of a face field (boundary faces included)."""
    return np.diff(u, axis=0) / grid.hx + np.diff(v, axis=1) / grid.hy


def gradient(p, grid: GridSpec):
    """Face gradient of a cell field; boundary faces are set to zero."""
    gu = np.zeros((grid.nx + 1, grid.ny))
    gv = np.zeros((grid.nx, grid.ny + 1))
    gu[1:-1, :] = np.diff(p, axis=0) / grid.hx
    gv[:, 1:-1] = np.diff(p, axis=1) / grid.hy
    return gu, gv


def _pad_ghost(f, axis, sign):
    # ghost = sign * boundary value; -1 reflects Dirichlet, +1 mirrors Neumann
    lo = np.take(f, [0], axis=axis) * sign
    hi = np.take(f, [-1], axis=axis) * sign
    return np.concatenate([lo, f, hi], axis=axis)


def laplacian(f, grid: GridSpec, bc="dirichlet", v=None):
    """Five-point Laplacian.

    With ``v`` given, ``(f, v)`` is a face velocity and the Dirichlet vector
    Laplacian is returned on interior faces (boundary faces zero). Otherwise
    ``f`` is a cell field with ghost reflection (``bc='dirichlet'``) or ghost
    mirroring (``bc='neumann'``).
    """
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    if v is not None:
        u = f
        lu = np.zeros_like(u)
        uy = _pad_ghost(u, 1, -1.0)
        lu[1:-1] = ((u[2:] - 2 * u[1:-1] + u[:-2]) / hx2
                    + (uy[1:-1, 2:] - 2 * uy[1:-1, 1:-1] + uy[1:-1, :-2]) / hy2)
        lv = np.zeros_like(v)
        vx = _pad_ghost(v, 0, -1.0)
        lv[:, 1:-1] = ((vx[2:, 1:-1] - 2 * vx[1:-1, 1:-1] + vx[:-2, 1:-1]) / hx2
                       + (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / hy2)
        return lu, lv
    sign = -1.0 if bc == "dirichlet" else 1.0
    g = _pad_ghost(_pad_ghost(f, 0, sign), 1, sign)
    return ((g[2:, 1:-1] - 2 * f + g[:-2, 1:-1]) / hx2
            + (g[1:-1, 2:] - 2 * f + g[1:-1, :-2]) / hy2)


def box_mask(grid: GridSpec, box, where="cell"):
    """Sharp 0/1 indicator of an axis-aligned box ``((x0, x1), (y0, y1))``."""
    X, Y = {"cell": grid.cell_centers, "u": grid.u_faces, "v": grid.v_faces}[where]()
    (x0, x1), (y0, y1) = box
    return ((X > x0) & (X < x1) & (Y > y0) & (Y < y1)).astype(float)


# ---------------------------------------------------------------------------
# sparse operators on packed vectors

def _diff_1d(n, h):
    # n cells -> n-1 interior faces
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h


def _avg_1d(n):
    # n-1 interior faces -> n cells
    return 0.5 * abs(_diff_1d(n, 1.0)).T


def _cells_second_diff(n, h, bc):
    main = -2.0 * np.ones(n)
    end = -3.0 if bc == "dirichlet" else -1.0
    main[0] += end + 2.0
    main[-1] += end + 2.0
    if n == 1:
        main[0] = 2 * end + 2.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], shape=(n, n)) / h ** 2


def _nodes_second_diff(n, h):
    off = np.ones(n - 1)
    return sp.diags([off, -2.0 * np.ones(n), off], [-1, 0, 1], shape=(n, n)) / h ** 2


class Operators:
    """Sparse operators and cached factorizations for one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        hx, hy = grid.hx, grid.hy
        Ix, Iy = sp.identity(nx), sp.identity(ny)
        Gx = sp.kron(_diff_1d(nx, hx), Iy)
        Gy = sp.kron(Ix, _diff_1d(ny, hy))
        self.G = sp.vstack([Gx, Gy]).tocsr()
        self.D = (-self.G.T).tocsr()
        Lu = (sp.kron(_nodes_second_diff(nx - 1, hx), Iy)
              + sp.kron(sp.identity(nx - 1), _cells_second_diff(ny, hy, "dirichlet")))
        Lv = (sp.kron(_cells_second_diff(nx, hx, "dirichlet"), sp.identity(ny - 1))
              + sp.kron(Ix, _nodes_second_diff(ny - 1, hy)))
        self.Lvel = sp.block_diag([Lu, Lv]).tocsr()
        self.Lcell = {
            bc: (sp.kron(_cells_second_diff(nx, hx, bc), Iy)
                 + sp.kron(Ix, _cells_second_diff(ny, hy, bc))).tocsr()
            for bc in ("dirichlet", "neumann")
        }
        Au = sp.kron(_avg_1d(nx), Iy)
        Av = sp.kron(Ix, _avg_1d(ny))
        # faces -> cells averaging; its transpose maps cells -> faces
        self.Avg = sp.hstack([Au, Av]).tocsr()
        # buoyancy: theta averaged onto interior horizontal faces (y-velocity)
        self.B = sp.vstack([sp.csr_matrix((grid.nu_int, grid.ncell)), Av.T]).tocsr()
        self._solvers = {}

    # factorized solves, cached per dt ------------------------------------
    def stokes_solver(self, dt):
        key = ("stokes", dt)
        if key not in self._solvers:
            self._solvers[key] = StokesSolver(self, dt)
        return self._solvers[key]

    def heat_solver(self, dt, bc="dirichlet"):
        key = ("heat", bc, dt)
        if key not in self._solvers:
            A = (sp.identity(self.grid.ncell) - dt * self.Lcell[bc]).tocsc()
            self._solvers[key] = spla.splu(A).solve
        return self._solvers[key]

    def leray(self):
        """Exact (direct) orthogonal projector onto discretely solenoidal vectors."""
        key = ("leray",)
        if key not in self._solvers:
            Gp = self.G[:, 1:]
            L = (Gp.T @ Gp).tocsc()
            lu = spla.splu(L)
            G = self.G

            def apply(vec):
                q = np.zeros(self.grid.ncell)
                q[1:] = lu.solve(Gp.T @ vec)
                return vec - G @ q, q

            self._solvers[key] = apply
        return self._solvers[key]


class StokesSolver:
    """Backward-Euler Stokes step ``(I - dt L) y + G q = r``, ``G^T y = 0``.

    The saddle-point matrix is symmetric, so the velocity map ``r -> y`` is a
    symmetric operator with solenoidal range. One pressure unknown is pinned;
    the dropped constraint is implied by the others.
    """

    def __init__(self, ops: Operators, dt):
        grid = ops.grid
        self.nvel = grid.nvel
        self.ncell = grid.ncell
        A = sp.identity(grid.nvel) - dt * ops.Lvel
        Gp = ops.G[:, 1:]
        K = sp.bmat([[A, Gp], [Gp.T, None]]).tocsc()
        self._lu = spla.splu(K)

    def __call__(self, r):
        sol = self._lu.solve(np.concatenate([r, np.zeros(self.ncell - 1)]))
        q = np.zeros(self.ncell)
        q[1:] = sol[self.nvel:]
        q -= q.mean()
        return sol[: self.nvel], q


@functools.lru_cache(maxsize=16)
def operators(grid: GridSpec) -> Operators:
    return Operators(grid)


# ---------------------------------------------------------------------------
# projection

def pcg(matvec, b, diag, atol, maxiter):
    """Jacobi-preconditioned CG to ``||r||_2 <= atol``; returns ``(x, iterations)``."""
    x = np.zeros_like(b)
    r = b.copy()
    if np.linalg.norm(r) <= atol:
        return x, 0
    z = r / diag
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = matvec(p)
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        if np.linalg.norm(r) <= atol:
            return x, k
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise PoissonNoConverge(f"CG did not reach {atol} in {maxiter} iterations")


def project(u, v, grid: GridSpec, tol=1e-11, maxiter=None):
    """Remove the gradient part of a face field.

    Solves ``div grad q = div u`` by Jacobi-preconditioned CG (``q`` mean
    zero) and returns ``(u - grad q, v - grad q, q)`` on full face arrays.
    ``tol`` bounds the max-norm divergence of the result.
    """
    ops = operators(grid)
    u = np.asarray(u, float).copy()
    v = np.asarray(v, float).copy()
    u[0], u[-1], v[:, 0], v[:, -1] = 0.0, 0.0, 0.0, 0.0
    vec = grid.pack(u, v)
    rhs = -(ops.D @ vec)  # G^T vec
    rhs -= rhs.mean()
    L = (ops.G.T @ ops.G).tocsr()
    diag = L.diagonal()
    if maxiter is None:
        maxiter = 10 * grid.ncell
    # the divergence of the result equals minus the CG residual
    q, _ = pcg(lambda x: L @ x, rhs, diag, tol, maxiter)
    q -= q.mean()
    out = vec - ops.G @ q
    uo, vo = grid.unpack(out)
    return uo, vo, q.reshape(grid.nx, grid.ny)


# ---------------------------------------------------------------------------
# dumps

def dump_field(path, values, grid: GridSpec, kind):
    """Write ``i,j,value`` CSV plus a ``<path>.meta`` key=value sidecar."""
    values = np.asarray(values)
    with open(path, "w") as fh:
        fh.write("i,j,value\n")
        for (i, j), val in np.ndenumerate(values):
            fh.write(f"{i},{j},{float(val)!r}\n")
    with open(os.fspath(path) + ".meta", "w") as fh:
        fh.write(f"nx={grid.nx}\nny={grid.ny}\nhx={grid.hx!r}\nhy={grid.hy!r}\n"
                 f"kind={kind}\nshape={values.shape[0]},{values.shape[1]}\n")


def load_field(path):
    meta = {}
    with open(os.fspath(path) + ".meta") as fh:
        for line in fh:
            k, _, v = line.strip().partition("=")
            meta[k] = v
    shape = tuple(int(s) for s in meta["shape"].split(","))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.zeros(shape)
    out[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    return out, meta
