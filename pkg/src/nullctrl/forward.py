"""Time integrators: target trajectory, linearized control system, reduced
nonlinear system and the Neumann-temperature variant.

All solvers use backward Euler for diffusion. One step of the linear system
maps ``(y^n, theta^n)`` to ``(y^{n+1}, theta^{n+1})`` by

    (I - dt L) y^{n+1} + grad q = y^n + dt (f + v_j e_j 1_w + B theta^n),  div y^{n+1} = 0
    (I - dt L) theta^{n+1}      = theta^n + dt (f0 + v0 1_w - C_{n+1} y^{n+1})

where ``B`` averages theta onto horizontal faces (buoyancy along e_N) and
``C_{n+1} y`` is the cell average of ``y . grad theta_bar(t_{n+1})``.
Sources and controls carry one entry per step; entry ``k`` acts on
``(t_k, t_{k+1}]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolation, StructureError
from .grid import GridSpec, box_mask, operators


@dataclass
class TrajectoryBar:
    grid: GridSpec
    theta_bar: np.ndarray       # (nt+1, nx, ny)
    p_bar: np.ndarray           # (nt+1, nx, ny)
    grad_theta_bar: np.ndarray  # (nt+1, nvel) packed face gradient
    theta_bar0: np.ndarray
    regularity: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, grid):
        z = np.zeros((grid.nt + 1, grid.nx, grid.ny))
        return cls(grid, z, z.copy(), np.zeros((grid.nt + 1, grid.nvel)),
                   np.zeros((grid.nx, grid.ny)), {"d3_theta_max": 0.0, "grad_theta_t_max": 0.0})

    def grad_faces(self, n):
        return self.grid.unpack(self.grad_theta_bar[n])


def _heat_1d_matrix(n, h, dt):
    import scipy.sparse as sp
    from .grid import _cells_second_diff
    return (sp.identity(n) - dt * _cells_second_diff(n, h, "dirichlet")).tocsc()


def solve_trajectory(theta_bar0, grid: GridSpec) -> TrajectoryBar:
    """Evolve a vertical temperature profile by the heat equation.

    The profile must not vary horizontally: ``grad p_bar = theta_bar e_N``
    forces ``d_1 theta_bar = 0``. The heat equation is solved in the vertical
    variable only (Dirichlet at the bottom and top walls) so the horizontal
    structure is preserved exactly.
    """
    import scipy.sparse.linalg as spla

    th0 = np.asarray(theta_bar0, float)
    scale = max(1.0, float(np.abs(th0).max()))
    if np.abs(th0 - th0[:1, :]).max() > 1e-12 * scale:
        raise StructureError("theta_bar0 must depend on the vertical coordinate only")
    col = th0[0].copy()
    lu = spla.splu(_heat_1d_matrix(grid.ny, grid.hy, grid.dt))
    cols = np.empty((grid.nt + 1, grid.ny))
    cols[0] = col
    for n in range(grid.nt):
        cols[n + 1] = lu.solve(cols[n])
    theta = np.broadcast_to(cols[:, None, :], (grid.nt + 1, grid.nx, grid.ny)).copy()

    # p_bar: discrete vertical primitive so that G p_bar = B theta_bar exactly
    p_cols = np.zeros_like(cols)
    p_cols[:, 1:] = np.cumsum(0.5 * grid.hy * (cols[:, :-1] + cols[:, 1:]), axis=1)
    p_cols -= p_cols.mean(axis=1, keepdims=True)
    p = np.broadcast_to(p_cols[:, None, :], theta.shape).copy()

    ops = operators(grid)
    grad = np.stack([ops.G @ theta[n].ravel() for n in range(grid.nt + 1)])
    reg = {
        "d3_theta_max": float(np.abs(np.diff(cols, 3, axis=1)).max() / grid.hy ** 3)
        if grid.ny > 3 else 0.0,
        "grad_theta_t_max": float(np.abs(np.diff(grad, axis=0)).max() / grid.dt)
        if grid.nt > 0 else 0.0,
    }
    return TrajectoryBar(grid, theta, p, grad, th0.copy(), reg)


@dataclass
class FlowState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    @property
    def y(self):
        return self.u, self.v

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)),
                   np.zeros((grid.nx, grid.ny)), np.zeros((grid.nx, grid.ny)), t)


@dataclass
class Trajectory:
    """A stored run: packed velocity, temperature and pressure at every level."""
    grid: GridSpec
    y: np.ndarray       # (nt+1, nvel)
    theta: np.ndarray   # (nt+1, nx, ny)
    p: np.ndarray       # (nt+1, nx, ny)

    def __len__(self):
        return self.y.shape[0]

    def state(self, n) -> FlowState:
        u, v = self.grid.unpack(self.y[n])
        return FlowState(u, v, self.p[n], self.theta[n], float(self.grid.times[n]))

    def terminal_norm(self):
        h2 = self.grid.cell_volume
        return float(np.sqrt(h2 * (self.y[-1] @ self.y[-1] + np.sum(self.theta[-1] ** 2))))

    def l2_norm(self):
        g = self.grid
        return float(np.sqrt(g.dt * g.cell_volume * (np.sum(self.y ** 2) + np.sum(self.theta ** 2))))

    def __sub__(self, other):
        return Trajectory(self.grid, self.y - other.y, self.theta - other.theta, self.p - other.p)


@dataclass
class SourcePair:
    f: np.ndarray    # (nt, nvel) packed
    f0: np.ndarray   # (nt, nx, ny)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.nt, grid.nvel)), np.zeros((grid.nt, grid.nx, grid.ny)))

    @classmethod
    def from_fields(cls, grid, fu=None, fv=None, f0=None):
        nt = grid.nt
        fu = np.zeros((nt, grid.nx + 1, grid.ny)) if fu is None else fu
        fv = np.zeros((nt, grid.nx, grid.ny + 1)) if fv is None else fv
        f = np.stack([grid.pack(fu[k], fv[k]) for k in range(nt)])
        f0 = np.zeros((nt, grid.nx, grid.ny)) if f0 is None else np.asarray(f0, float)
        return cls(f, f0)

    def __add__(self, other):
        return SourcePair(self.f + other.f, self.f0 + other.f0)


def control_masks(grid: GridSpec, omega, j_index=None):
    """Cell indicator of omega and packed face indicator for velocity component j."""
    cell = box_mask(grid, omega, "cell")
    faces = np.zeros(grid.nvel)
    if j_index is not None:
        u = box_mask(grid, omega, "u") if j_index == 1 else np.zeros((grid.nx + 1, grid.ny))
        v = box_mask(grid, omega, "v") if j_index == 2 else np.zeros((grid.nx, grid.ny + 1))
        faces = grid.pack(u, v)
    return cell, faces


@dataclass
class ControlPair:
    """Scalar temperature control and an optional velocity-component control.

    ``v0`` has shape ``(nt, nx, ny)``; ``vj`` is a packed face series
    ``(nt, nvel)`` that may only be non-zero on component ``j_index``.
    Both are multiplied by the omega indicators when applied.
    """
    v0: np.ndarray
    mask: np.ndarray
    vj: np.ndarray | None = None
    j_index: int | None = None
    face_mask: np.ndarray | None = None

    @classmethod
    def zeros(cls, grid, omega):
        cell, _ = control_masks(grid, omega)
        return cls(np.zeros((grid.nt, grid.nx, grid.ny)), cell)

    def temperature_source(self):
        return self.v0 * self.mask

    def velocity_source(self):
        if self.vj is None:
            return None
        return self.vj * self.face_mask

    def vanishes_outside_omega(self):
        ok = bool(np.all(self.v0[:, self.mask == 0] == 0.0))
        if self.vj is not None:
            ok &= bool(np.all(self.vj[:, self.face_mask == 0] == 0.0))
        return ok

    def vj_field(self, k, grid):
        return grid.unpack(self.vj[k] * self.face_mask)


class LinearStepper:
    """Factorized one-step maps for the linear system and its transpose."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.ops = operators(grid)
        self.dt = grid.dt
        self.stokes = self.ops.stokes_solver(grid.dt)
        self.heat = self.ops.heat_solver(grid.dt, "dirichlet")

    def step(self, y, th, fu, f0, gbar):
        """``gbar`` is the packed face gradient of theta_bar at the new level."""
        ops, dt = self.ops, self.dt
        r = y + dt * (ops.B @ th) + dt * fu
        y1, q = self.stokes(r)
        rt = th + dt * f0 - dt * (ops.Avg @ (gbar * y1))
        th1 = self.heat(rt)
        return y1, q / dt, th1

    def adjoint_step(self, phi, psi, gu, g0, gbar):
        """Exact transpose of :meth:`step` with adjoint sources added at the new level.

        Returns ``(phi^n, psi^n, rho_u, rho_theta, pi)`` where ``rho_u`` and
        ``rho_theta`` are the quantities that pair with the forward sources
        of the same step.
        """
        ops, dt = self.ops, self.dt
        rho_t = self.heat(psi + dt * g0)
        phit = phi + dt * gu - dt * gbar * (ops.Avg.T @ rho_t)
        rho_u, q = self.stokes(phit)
        psi0 = rho_t + dt * (ops.B.T @ rho_u)
        return rho_u, psi0, rho_u, rho_t, q / dt


def _as_packed(grid, y0):
    if y0 is None:
        return np.zeros(grid.nvel)
    if isinstance(y0, tuple):
        return grid.pack(*y0)
    return np.asarray(y0, float)


def step_linear(state: FlowState, src_k, ctrl_k, bar: TrajectoryBar, n, stepper=None):
    """Advance one step from level ``n``.

    ``src_k`` is ``(f_packed, f0)`` for this step and ``ctrl_k`` is
    ``(v0, vj_packed)`` already restricted to omega (``vj`` may be None).
    """
    grid = bar.grid
    stepper = stepper or LinearStepper(grid)
    y = grid.pack(state.u, state.v)
    fu, f0 = src_k
    v0, vj = ctrl_k
    fu = fu + (0.0 if vj is None else vj)
    y1, p1, th1 = stepper.step(y, state.theta.ravel(), fu, (f0 + v0).ravel(),
                               bar.grad_theta_bar[n + 1])
    u, v = grid.unpack(y1)
    return FlowState(u, v, p1.reshape(grid.nx, grid.ny), th1.reshape(grid.nx, grid.ny),
                     float(grid.times[n + 1]))


def solve_linear(y0, theta0, src: SourcePair | None, ctrl: ControlPair | None,
                 bar: TrajectoryBar, stepper=None) -> Trajectory:
    grid = bar.grid
    stepper = stepper or LinearStepper(grid)
    nt, nc = grid.nt, grid.ncell
    src = src or SourcePair.zeros(grid)
    fu = src.f
    f0 = src.f0.reshape(nt, nc)
    if ctrl is not None:
        f0 = f0 + ctrl.temperature_source().reshape(nt, nc)
        vs = ctrl.velocity_source()
        if vs is not None:
            fu = fu + vs
    Y = np.zeros((nt + 1, grid.nvel))
    TH = np.zeros((nt + 1, nc))
    P = np.zeros((nt + 1, nc))
    Y[0] = _as_packed(grid, y0)
    TH[0] = np.asarray(theta0, float).ravel()
    for n in range(nt):
        Y[n + 1], P[n + 1], TH[n + 1] = stepper.step(Y[n], TH[n], fu[n], f0[n],
                                                     bar.grad_theta_bar[n + 1])
    shape = (nt + 1, grid.nx, grid.ny)
    return Trajectory(grid, Y, TH.reshape(shape), P.reshape(shape))


# ---------------------------------------------------------------------------
# nonlinear terms

def _pad(f, axis, sign=-1.0):
    lo = np.take(f, [0], axis=axis) * sign
    hi = np.take(f, [-1], axis=axis) * sign
    return np.concatenate([lo, f, hi], axis=axis)


def _upwind(vel, minus, plus):
    return vel * np.where(vel > 0, minus, plus)


def momentum_advection(u, v, grid: GridSpec):
    """First-order upwind ``(y . grad) y`` on interior faces (full arrays out)."""
    hx, hy = grid.hx, grid.hy
    au = np.zeros_like(u)
    uc = u[1:-1]
    vbar = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
    uy = _pad(u, 1)
    au[1:-1] = (_upwind(uc, (uc - u[:-2]) / hx, (u[2:] - uc) / hx)
                + _upwind(vbar, (uc - uy[1:-1, :-2]) / hy, (uy[1:-1, 2:] - uc) / hy))
    av = np.zeros_like(v)
    vc = v[:, 1:-1]
    ubar = 0.25 * (u[:-1, :-1] + u[1:, :-1] + u[:-1, 1:] + u[1:, 1:])
    vx = _pad(v, 0)
    av[:, 1:-1] = (_upwind(vc, (vc - v[:, :-2]) / hy, (v[:, 2:] - vc) / hy)
                   + _upwind(ubar, (vc - vx[:-2, 1:-1]) / hx, (vx[2:, 1:-1] - vc) / hx))
    return au, av


def scalar_advection(u, v, theta, grid: GridSpec):
    """Conservative upwind ``div(y theta)``; boundary faces carry no flux."""
    fx = np.zeros_like(u)
    fy = np.zeros_like(v)
    ui, vi = u[1:-1], v[:, 1:-1]
    fx[1:-1] = ui * np.where(ui > 0, theta[:-1], theta[1:])
    fy[:, 1:-1] = vi * np.where(vi > 0, theta[:, :-1], theta[:, 1:])
    return np.diff(fx, axis=0) / grid.hx + np.diff(fy, axis=1) / grid.hy


def check_cfl(u, v, grid: GridSpec, limit=1.0):
    c = max(np.abs(u).max() * grid.dt / grid.hx, np.abs(v).max() * grid.dt / grid.hy)
    if c > limit:
        raise CflViolation(f"|y| dt / h = {c:.3g} exceeds {limit}")
    return c


def nonlinear_terms(y_packed, theta, grid: GridSpec):
    """Return ``(-(y.grad)y packed, -y.grad theta)`` for one level."""
    u, v = grid.unpack(y_packed)
    au, av = momentum_advection(u, v, grid)
    return -grid.pack(au, av), -scalar_advection(u, v, theta.reshape(grid.nx, grid.ny), grid)


def nonlinear_sources(traj: Trajectory) -> SourcePair:
    """Lagged nonlinear sources: step ``k`` uses the state at level ``k``."""
    grid = traj.grid
    f = np.zeros((grid.nt, grid.nvel))
    f0 = np.zeros((grid.nt, grid.nx, grid.ny))
    for k in range(grid.nt):
        f[k], f0[k] = nonlinear_terms(traj.y[k], traj.theta[k], grid)
    return SourcePair(f, f0)


def step_nonlinear(state: FlowState, ctrl_k, bar: TrajectoryBar, n, stepper=None):
    """Semi-implicit step of the reduced nonlinear system from level ``n``.

    Advection is explicit upwind, diffusion and pressure implicit; the
    ``y . grad theta_bar`` coupling is treated as in :func:`step_linear`.
    """
    grid = bar.grid
    check_cfl(state.u, state.v, grid)
    fu, f0 = nonlinear_terms(grid.pack(state.u, state.v), state.theta, grid)
    return step_linear(state, (fu, f0), ctrl_k, bar, n, stepper)


def solve_nonlinear(y0, theta0, ctrl: ControlPair | None, bar: TrajectoryBar,
                    stepper=None) -> Trajectory:
    grid = bar.grid
    stepper = stepper or LinearStepper(grid)
    nt, nc = grid.nt, grid.ncell
    v0 = np.zeros((nt, nc)) if ctrl is None else ctrl.temperature_source().reshape(nt, nc)
    vj = None if ctrl is None else ctrl.velocity_source()
    Y = np.zeros((nt + 1, grid.nvel))
    TH = np.zeros((nt + 1, nc))
    P = np.zeros((nt + 1, nc))
    Y[0] = _as_packed(grid, y0)
    TH[0] = np.asarray(theta0, float).ravel()
    for n in range(nt):
        u, v = grid.unpack(Y[n])
        check_cfl(u, v, grid)
        fu, f0 = nonlinear_terms(Y[n], TH[n], grid)
        if vj is not None:
            fu = fu + vj[n]
        Y[n + 1], P[n + 1], TH[n + 1] = stepper.step(Y[n], TH[n], fu, f0.ravel() + v0[n],
                                                     bar.grad_theta_bar[n + 1])
    shape = (nt + 1, grid.nx, grid.ny)
    return Trajectory(grid, Y, TH.reshape(shape), P.reshape(shape))


def solve_heat_neumann(theta0, grid: GridSpec, y=None):
    """Heat equation with zero-flux walls and optional advection by ``y``.

    ``y`` is a solenoidal face velocity ``(u, v)`` held fixed in time, or a
    packed series of shape ``(nt + 1, nvel)``. Returns ``(nt + 1, nx, ny)``.
    """
    ops = operators(grid)
    solve = ops.heat_solver(grid.dt, "neumann")
    out = np.empty((grid.nt + 1, grid.nx, grid.ny))
    out[0] = theta0
    if y is None:
        series = None
    elif isinstance(y, tuple):
        series = [y] * (grid.nt + 1)
    else:
        series = [grid.unpack(row) for row in y]
    for n in range(grid.nt):
        rhs = out[n]
        if series is not None:
            u, v = series[n]
            check_cfl(u, v, grid)
            rhs = rhs - grid.dt * scalar_advection(u, v, out[n], grid)
        out[n + 1] = solve(rhs.ravel()).reshape(grid.nx, grid.ny)
    return out
