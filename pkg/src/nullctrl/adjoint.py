"""Backward adjoint solver built as the algebraic transpose of the forward step.

For terminal data ``(phi_T, psi_T)`` and sources ``(g, g0)`` the recursion
runs ``n = nt-1, ..., 0`` with :meth:`LinearStepper.adjoint_step`. The
discrete pairing identity

    <y(T), phi_T> + <theta(T), psi_T> - <y0, phi(0)> - <theta0, psi(0)>
        = dt sum_k (<f_k + v_j, rho_u^k> + <f0_k + v0 1_w, rho_theta^k>)
          - dt sum_k (<g_k, y^{k+1}> + <g0_k, theta^{k+1}>)

then holds to round-off, with ``<a, b> = hx hy sum(a b)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import (ControlPair, LinearStepper, SourcePair, Trajectory,
                      TrajectoryBar, _as_packed, solve_linear)


@dataclass
class AdjointState:
    phi_u: np.ndarray
    phi_v: np.ndarray
    pi: np.ndarray
    psi: np.ndarray
    t: float


@dataclass
class AdjointSeries:
    grid: object
    phi: np.ndarray        # (nt+1, nvel) packed, level n
    psi: np.ndarray        # (nt+1, nx, ny)
    pi: np.ndarray         # (nt+1, nx, ny); entry nt unused
    rho_u: np.ndarray      # (nt, nvel): pairs with velocity sources of step k
    rho_theta: np.ndarray  # (nt, nx, ny): pairs with temperature sources of step k

    def state(self, n) -> AdjointState:
        u, v = self.grid.unpack(self.phi[n])
        return AdjointState(u, v, self.pi[n], self.psi[n], float(self.grid.times[n]))


def solve_adjoint(phiT, psiT, g: SourcePair | None, bar: TrajectoryBar,
                  stepper=None, project_terminal=True) -> AdjointSeries:
    """March the adjoint system backward from ``t = T``.

    ``g`` bundles the adjoint sources in the same per-step layout as
    :class:`SourcePair` (``g.f`` velocity part, ``g.f0`` temperature part).
    ``phiT`` is projected onto solenoidal fields on input.
    """
    grid = bar.grid
    stepper = stepper or LinearStepper(grid)
    nt, nc = grid.nt, grid.ncell
    phi_T = _as_packed(grid, phiT)
    if project_terminal:
        phi_T, _ = stepper.ops.leray()(phi_T)
    Phi = np.zeros((nt + 1, grid.nvel))
    Psi = np.zeros((nt + 1, nc))
    Pi = np.zeros((nt + 1, nc))
    Ru = np.zeros((nt, grid.nvel))
    Rt = np.zeros((nt, nc))
    Phi[nt] = phi_T
    Psi[nt] = np.asarray(psiT, float).ravel()
    gu = np.zeros((nt, grid.nvel)) if g is None else g.f
    g0 = np.zeros((nt, nc)) if g is None else g.f0.reshape(nt, nc)
    for n in range(nt - 1, -1, -1):
        Phi[n], Psi[n], Ru[n], Rt[n], Pi[n] = stepper.adjoint_step(
            Phi[n + 1], Psi[n + 1], gu[n], g0[n], bar.grad_theta_bar[n + 1])
    shape = (nt + 1, grid.nx, grid.ny)
    return AdjointSeries(grid, Phi, Psi.reshape(shape), Pi.reshape(shape), Ru,
                         Rt.reshape(nt, grid.nx, grid.ny))


def duality_terms(traj: Trajectory, adj: AdjointSeries, src: SourcePair | None,
                  ctrl: ControlPair | None, g: SourcePair | None):
    """Each term of the pairing identity, as a dict of floats."""
    grid = traj.grid
    h2, dt = grid.cell_volume, grid.dt
    nt = grid.nt
    src = src or SourcePair.zeros(grid)
    fu, f0 = src.f, src.f0
    ctrl_u = np.zeros_like(fu)
    ctrl_0 = np.zeros_like(f0)
    if ctrl is not None:
        ctrl_0 = ctrl.temperature_source()
        vs = ctrl.velocity_source()
        if vs is not None:
            ctrl_u = vs
    g = g or SourcePair.zeros(grid)
    return {
        "terminal": h2 * (traj.y[-1] @ adj.phi[-1] + np.sum(traj.theta[-1] * adj.psi[-1])),
        "initial": h2 * (traj.y[0] @ adj.phi[0] + np.sum(traj.theta[0] * adj.psi[0])),
        "sources": dt * h2 * (np.sum(fu * adj.rho_u) + np.sum(f0 * adj.rho_theta)),
        "controls": dt * h2 * (np.sum(ctrl_u * adj.rho_u) + np.sum(ctrl_0 * adj.rho_theta)),
        "adjoint_sources": dt * h2 * (np.sum(g.f * traj.y[1:nt + 1])
                                      + np.sum(g.f0 * traj.theta[1:nt + 1])),
    }


def duality_gap(y0, theta0, src, ctrl, phiT, psiT, g, bar: TrajectoryBar,
                relative=False, stepper=None):
    """Absolute (or relative to the sum of |terms|) defect of the pairing identity."""
    stepper = stepper or LinearStepper(bar.grid)
    traj = solve_linear(y0, theta0, src, ctrl, bar, stepper)
    adj = solve_adjoint(phiT, psiT, g, bar, stepper)
    t = duality_terms(traj, adj, src, ctrl, g)
    gap = abs(t["terminal"] - t["initial"] - t["sources"] - t["controls"]
              + t["adjoint_sources"])
    if relative:
        scale = sum(abs(x) for x in t.values())
        return gap / scale if scale > 0 else 0.0
    return gap
