"""Penalized dual (HUM) solver over terminal adjoint data.

For terminal data ``lam = (phi_T, psi_T)`` the dual functional is

    J(lam) = 1/2 int_w w0 |psi|^2 [+ 1/2 int_w wj |phi_j|^2] + eps/2 |lam|^2
             + <y0, phi(0)> + <theta0, psi(0)> + int (f.phi + f0 psi)

with ``(phi, psi)`` the adjoint solution. Its gradient is
``eps lam + (y(T), theta(T))`` where the forward run is driven by
``v0 = w0 psi 1_w`` (and ``vj = wj phi_j 1_w``), so at the minimizer
``eps lam + x(T) = 0``. Writing ``kappa = -psi`` gives the familiar
``v0 = -w0 kappa``.

The control weights ``exp(-4 s beta_hat - s beta_star) gamma_hat**(49/4)``
are far below double range for moderate ``s``; they are handled as
exponents and, by default, shifted so their maximum over time is 1. A
constant factor on an observation weight is equivalent to rescaling ``eps``.
With ``relative_epsilon`` the penalty is ``eps * ||Gramian||`` so ``eps`` is
dimensionless.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .adjoint import solve_adjoint
from .forward import (ControlPair, LinearStepper, SourcePair, Trajectory,
                      TrajectoryBar, _as_packed, control_masks, solve_linear)
from .weights import WeightBundle, exp_flush

log = logging.getLogger(__name__)

LN10 = np.log(10.0)


@dataclass(frozen=True)
class DualConfig:
    epsilon: float = 1e-4
    cg_tol: float = 1e-8
    cg_max_iters: int = 500
    observe_velocity: bool = False
    j_index: int = 1
    relative_epsilon: bool = True
    normalize_weights: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.j_index not in (1, 2):
            raise ValueError("j_index must be 1 or 2 in two dimensions")


def control_log_weights(w: WeightBundle):
    """Natural logs of the temperature and velocity control weights on the time nodes."""
    lw0 = w.log_time_weight({"hat": -4, "star": -1}, 49 / 4)
    lwj = w.log_time_weight({"hat": -2, "star": -3}, 7)
    return lw0, lwj


def control_weights(w: WeightBundle):
    """``(w0, wj)`` on the time nodes, flushed to 0 below 1e-300."""
    lw0, lwj = control_log_weights(w)
    return exp_flush(lw0), exp_flush(lwj)


class ControlProblem:
    """Everything about a linear control problem that does not depend on the data."""

    def __init__(self, bar: TrajectoryBar, w: WeightBundle, omega, cfg: DualConfig,
                 stepper=None):
        grid = bar.grid
        if len(w.t) != grid.nt + 1:
            raise ValueError("weight bundle and grid have different time levels")
        self.grid, self.bar, self.w, self.omega, self.cfg = grid, bar, w, omega, cfg
        self.stepper = stepper or LinearStepper(grid)
        self.j_index = cfg.j_index if cfg.observe_velocity else None
        self.mask, self.face_mask = control_masks(grid, omega, self.j_index)
        lw0, lwj = control_log_weights(w)
        # controls of step k are weighted at the left node t_k
        self.log_w0 = lw0[:-1]
        self.log_wj = lwj[:-1]
        self.shift0 = float(self.log_w0.max()) if cfg.normalize_weights else 0.0
        self.shiftj = float(self.log_wj.max()) if cfg.normalize_weights else 0.0
        self.w0 = exp_flush(self.log_w0 - self.shift0)
        self.wj = exp_flush(self.log_wj - self.shiftj)
        self.nvel = grid.nvel
        self._gram = None

    # vectors are (phi_T packed, psi_T flat)
    def inner(self, a, b):
        return self.grid.cell_volume * float(a @ b)

    def norm(self, a):
        return np.sqrt(self.inner(a, a))

    def split(self, lam):
        return lam[: self.nvel], lam[self.nvel:]

    def adjoint(self, lam, g=None):
        phiT, psiT = self.split(lam)
        return solve_adjoint(phiT, psiT.reshape(self.grid.nx, self.grid.ny), g, self.bar,
                             self.stepper)

    def controls(self, adj) -> ControlPair:
        v0 = self.w0[:, None, None] * self.mask * adj.rho_theta
        vj = None
        if self.j_index is not None:
            vj = self.wj[:, None] * self.face_mask * adj.rho_u
        return ControlPair(v0, self.mask, vj, self.j_index,
                           self.face_mask if self.j_index is not None else None)

    def observation_energy(self, adj):
        g = self.grid
        e = np.sum(self.w0[:, None, None] * self.mask * adj.rho_theta ** 2)
        if self.j_index is not None:
            e += np.sum(self.wj[:, None] * self.face_mask * adj.rho_u ** 2)
        return 0.5 * g.dt * g.cell_volume * e

    def run(self, y0, theta0, src, ctrl) -> Trajectory:
        return solve_linear(y0, theta0, src, ctrl, self.bar, self.stepper)

    @staticmethod
    def terminal(traj: Trajectory):
        return np.concatenate([traj.y[-1], traj.theta[-1].ravel()])

    def gramian_action(self, lam):
        ctrl = self.controls(self.adjoint(lam))
        z = np.zeros((self.grid.nx, self.grid.ny))
        return self.terminal(self.run(None, z, None, ctrl))

    def gramian_norm(self, iters=40, rtol=1e-6):
        """Largest eigenvalue of the observability Gramian by power iteration."""
        if self._gram is None:
            rng = np.random.default_rng(12345)
            v = rng.standard_normal(self.nvel + self.grid.ncell)
            v[: self.nvel], _ = self.stepper.ops.leray()(v[: self.nvel])
            v /= self.norm(v)
            est = 0.0
            for _ in range(iters):
                Gv = self.gramian_action(v)
                new = self.inner(Gv, v)
                n = self.norm(Gv)
                if n == 0.0:
                    est = 0.0
                    break
                v = Gv / n
                if abs(new - est) <= rtol * abs(new):
                    est = new
                    break
                est = new
            self._gram = est
        return self._gram

    def eps_abs(self, eps=None):
        eps = self.cfg.epsilon if eps is None else eps
        if self.cfg.relative_epsilon:
            gn = self.gramian_norm()
            return eps * gn if gn > 0 else eps
        return eps


def _data_pairing(problem, adj, y0, theta0, src):
    g = problem.grid
    h2 = g.cell_volume
    val = h2 * (_as_packed(g, y0) @ adj.phi[0] + np.sum(np.asarray(theta0) * adj.psi[0]))
    if src is not None:
        val += g.dt * h2 * (np.sum(src.f * adj.rho_u) + np.sum(src.f0 * adj.rho_theta))
    return float(val)


def dual_functional(lam, problem: ControlProblem, y0, theta0, src, eps=None):
    """Value and L2-gradient of the penalized dual functional at ``lam``."""
    e = problem.eps_abs(eps)
    adj = problem.adjoint(lam)
    value = (problem.observation_energy(adj) + 0.5 * e * problem.inner(lam, lam)
             + _data_pairing(problem, adj, y0, theta0, src))
    traj = problem.run(y0, theta0, src, problem.controls(adj))
    grad = e * lam + problem.terminal(traj)
    return value, grad


@dataclass
class HumResult:
    phiT_opt: np.ndarray
    psiT_opt: np.ndarray
    controls: ControlPair
    trajectory: Trajectory
    terminal_norm: float
    dual_value: float
    kkt_residual: float
    e_norm_report: dict
    epsilon: float
    eps_abs: float
    cg_iters: int
    converged: bool
    cg_log: list = field(default_factory=list)
    weight_shift: float = 0.0
    scale: float = 0.0
    adjoint: object = None


def hum_solve(y0, theta0, src: SourcePair | None, bar: TrajectoryBar, w: WeightBundle,
              cfg: DualConfig, omega=None, problem: ControlProblem | None = None,
              eps=None, with_report=True) -> HumResult:
    """Minimize the penalized dual functional by conjugate gradients.

    Non-convergence within ``cfg.cg_max_iters`` is flagged in the result
    (``converged=False``) with the last iterate returned.
    """
    if problem is None:
        if omega is None:
            raise ValueError("omega or a prepared problem is required")
        problem = ControlProblem(bar, w, omega, cfg)
    grid = problem.grid
    eps = cfg.epsilon if eps is None else eps
    e = problem.eps_abs(eps)
    theta0 = np.asarray(theta0, float)

    free = problem.run(y0, theta0, src, None)
    b = -problem.terminal(free)
    lam = np.zeros_like(b)
    r = b.copy()
    bnorm = problem.norm(b)
    cg_log = [(0, 0.0, bnorm)]
    converged = bnorm == 0.0
    it = 0
    if not converged:
        p = r.copy()
        rr = problem.inner(r, r)
        for it in range(1, cfg.cg_max_iters + 1):
            Ap = problem.gramian_action(p) + e * p
            a = rr / problem.inner(p, Ap)
            lam += a * p
            r -= a * Ap
            rr_new = problem.inner(r, r)
            J = -0.5 * problem.inner(b + r, lam)
            cg_log.append((it, J, np.sqrt(rr_new)))
            if np.sqrt(rr_new) <= cfg.cg_tol * bnorm:
                converged = True
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        if not converged:
            log.warning("dual CG stopped at %d iterations (|r|/|b| = %.3g)",
                        it, np.sqrt(rr_new) / bnorm)

    adj = problem.adjoint(lam)
    ctrl = problem.controls(adj)
    traj = problem.run(y0, theta0, src, ctrl)
    xT = problem.terminal(traj)
    kkt = problem.norm(e * lam + xT)
    value = (problem.observation_energy(adj) + 0.5 * e * problem.inner(lam, lam)
             + _data_pairing(problem, adj, y0, theta0, src))
    phiT, psiT = problem.split(lam)
    report = e_norm_report(traj, ctrl, w, bar) if with_report else {}
    return HumResult(phiT, psiT.reshape(grid.nx, grid.ny), ctrl, traj, traj.terminal_norm(),
                     value, kkt, report, eps, e, it, converged, cg_log, problem.shift0,
                     bnorm, adj)


# ---------------------------------------------------------------------------
# weighted-norm diagnostics

def _log_l2_time(logw, sq, dt):
    """log of sqrt(dt sum_n exp(2 logw_n) sq_n), robust to zeros and huge weights."""
    with np.errstate(divide="ignore"):
        terms = 2 * logw + np.log(sq) + np.log(dt)
    terms = np.where(sq > 0, terms, -np.inf)
    return 0.5 * float(logsumexp(terms)) if np.any(sq > 0) else -np.inf


def _log_linf_time(logw, sq):
    with np.errstate(divide="ignore"):
        terms = np.where(sq > 0, logw + 0.5 * np.log(np.where(sq > 0, sq, 1.0)), -np.inf)
    return float(terms.max())


def residuals(traj: Trajectory, ctrl: ControlPair | None, bar: TrajectoryBar):
    """Per-step residuals of the linear equations (momentum packed, temperature)."""
    grid = traj.grid
    from .grid import operators
    ops = operators(grid)
    dt, nt = grid.dt, grid.nt
    ru = np.zeros((nt, grid.nvel))
    rt = np.zeros((nt, grid.ncell))
    TH = traj.theta.reshape(nt + 1, -1)
    P = traj.p.reshape(nt + 1, -1)
    v0 = None if ctrl is None else ctrl.temperature_source().reshape(nt, -1)
    vj = None if ctrl is None else ctrl.velocity_source()
    for k in range(nt):
        y1 = traj.y[k + 1]
        parts_u = [(y1 - traj.y[k]) / dt, -(ops.Lvel @ y1), ops.G @ P[k + 1], -(ops.B @ TH[k])]
        parts_t = [(TH[k + 1] - TH[k]) / dt, -(ops.Lcell["dirichlet"] @ TH[k + 1]),
                   ops.Avg @ (bar.grad_theta_bar[k + 1] * y1)]
        if vj is not None:
            parts_u.append(-vj[k])
        if v0 is not None:
            parts_t.append(-v0[k])
        for out, parts in ((ru, parts_u), (rt, parts_t)):
            res = sum(parts)
            # cancellation noise is not a residual
            res[np.abs(res) <= 1e-10 * max(np.abs(q).max() for q in parts)] = 0.0
            out[k] = res
    return ru, rt


def e_norm_report(traj: Trajectory, ctrl: ControlPair | None, w: WeightBundle,
                  bar: TrajectoryBar):
    """log10 of each weighted-norm component of the controlled tuple.

    States are weighted at levels ``0..nt-1`` and controls/residuals of step
    ``k`` at ``t_k``; the weight at ``t = T`` is infinite. ``-inf`` means the
    component is exactly zero.
    """
    from .grid import operators
    grid = traj.grid
    ops = operators(grid)
    nt, h2, dt = grid.nt, grid.cell_volume, grid.dt
    s = w.s
    bstar = w.beta_star[:nt]
    bhat = w.beta_hat[:nt]
    lg_hat = np.log(w.gamma_hat[:nt])
    lg_star = np.log(w.gamma_star[:nt])

    y = traj.y[:nt]
    th = traj.theta[:nt].reshape(nt, -1)
    Lv, Lc = ops.Lvel, ops.Lcell["dirichlet"]
    sq = lambda a: h2 * np.sum(a ** 2, axis=1)
    y_l2, th_l2 = sq(y), sq(th)
    y_h1 = -h2 * np.einsum("ni,ni->n", y, (Lv @ y.T).T)
    th_h1 = -h2 * np.einsum("ni,ni->n", th, (Lc @ th.T).T)
    y_h2 = y_l2 + y_h1 + sq((Lv @ y.T).T)
    th_h2 = th_l2 + th_h1 + sq((Lc @ th.T).T)

    lw_state = 1.5 * s * bstar
    lw_reg = 1.5 * s * bstar - 9 / 8 * lg_star
    out = {
        "y_L2": _log_l2_time(lw_state, y_l2, dt),
        "theta_L2": _log_l2_time(lw_state, th_l2, dt),
        "y_L2H2": _log_l2_time(lw_reg, y_h2, dt),
        "y_LinfH1": _log_linf_time(lw_reg, y_l2 + y_h1),
        "theta_L2H2": _log_l2_time(lw_reg, th_h2, dt),
        "theta_LinfH1": _log_linf_time(lw_reg, th_l2 + th_h1),
    }
    if ctrl is not None:
        v0 = ctrl.temperature_source().reshape(nt, -1)
        out["v0_L2"] = _log_l2_time(2 * s * bhat + 0.5 * s * bstar - 49 / 8 * lg_hat, sq(v0), dt)
        vj = ctrl.velocity_source()
        out["vj_L2"] = (_log_l2_time(s * bhat + 1.5 * s * bstar - 3.5 * lg_hat, sq(vj), dt)
                        if vj is not None else -np.inf)
    else:
        out["v0_L2"] = out["vj_L2"] = -np.inf
    ru, rt = residuals(traj, ctrl, bar)
    out["res_y"] = _log_l2_time(2.5 * s * bstar - 2 * lg_star, sq(ru), dt)
    out["res_theta"] = _log_l2_time(2.5 * s * bstar - 2.5 * lg_star, sq(rt), dt)
    vals = np.array(list(out.values()))
    out["total"] = 0.5 * float(logsumexp(2 * vals)) if np.any(np.isfinite(vals)) else -np.inf
    tn = traj.terminal_norm()
    out["terminal_weighted"] = 1.5 * s * bstar[-1] + np.log(tn) if tn > 0 else -np.inf
    return {k: v / LN10 for k, v in out.items()}
