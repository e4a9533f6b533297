"""Fixed-point control of the reduced nonlinear system.

Each outer iteration freezes the quadratic terms ``(y.grad)y`` and
``y.grad theta`` on the previous nonlinear trajectory, solves the linear
control problem with them as sources, and re-runs the nonlinear system with
the resulting controls.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import (ControlPair, SourcePair, Trajectory, TrajectoryBar, _as_packed,
                      nonlinear_sources, solve_nonlinear)
from .hum import LN10, ControlProblem, DualConfig, _log_l2_time, hum_solve
from .weights import WeightBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PicardConfig:
    delta: float = 1e-3
    max_outer: int = 8
    outer_tol: float = 1e-6
    epsilon_decay: bool = False

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")

    def epsilon(self, eps0, k):
        return eps0 * 2.0 ** (-k) if self.epsilon_decay else eps0


@dataclass
class PicardRow:
    outer_iter: int
    terminal_norm_linear: float
    terminal_norm_nonlinear: float
    diff: float
    f_norm_weighted: float
    f0_norm_weighted: float
    cg_iters: int
    epsilon: float


@dataclass
class PicardResult:
    controls: ControlPair
    trajectory: Trajectory
    history: list = field(default_factory=list)
    converged: bool = False
    hum: object = None

    @property
    def iterations(self):
        return len(self.history)


def weighted_source_norms(src: SourcePair, w: WeightBundle, cell_volume: float):
    """log10 of ``||e^{5/2 s beta*} gamma*^-2 f||`` and ``||e^{5/2 s beta*} gamma*^-5/2 f0||``.

    Source of step ``k`` is weighted at ``t_k``. The weight grows without bound
    as ``t -> T``, so values in the tens of thousands are normal.
    """
    nt = src.f.shape[0]
    bstar = w.beta_star[:nt]
    lg = np.log(w.gamma_star[:nt])
    sq_f = cell_volume * np.sum(src.f ** 2, axis=1)
    sq_0 = cell_volume * np.sum(src.f0.reshape(nt, -1) ** 2, axis=1)
    dt = w.T / nt
    a = _log_l2_time(2.5 * w.s * bstar - 2 * lg, sq_f, dt)
    b = _log_l2_time(2.5 * w.s * bstar - 2.5 * lg, sq_0, dt)
    return a / LN10, b / LN10


def picard_control(y0, theta0, bar: TrajectoryBar, w: WeightBundle, cfg: PicardConfig,
                   dual: DualConfig, omega=None, problem: ControlProblem | None = None):
    """Control the reduced nonlinear system started from ``(y0, theta0 - theta_bar0)``.

    Returns a :class:`PicardResult`; ``converged`` is False when the cap is
    reached or a solver fails mid-run (the history up to that point is kept).
    """
    grid = bar.grid
    if problem is None:
        problem = ControlProblem(bar, w, omega, dual)
    y0p = _as_packed(grid, y0)
    tth0 = np.asarray(theta0, float) - bar.theta_bar0
    size = np.sqrt(grid.cell_volume * (y0p @ y0p + np.sum(tth0 ** 2)))
    if size > cfg.delta * (1 + 1e-12):
        log.warning("initial perturbation %.3g exceeds delta = %.3g", size, cfg.delta)

    src = SourcePair.zeros(grid)
    prev = None
    history = []
    result = None
    for k in range(cfg.max_outer):
        eps = cfg.epsilon(dual.epsilon, k)
        res = hum_solve(y0p, tth0, src, bar, w, dual, problem=problem, eps=eps,
                        with_report=False)
        try:
            traj = solve_nonlinear(y0p, tth0, res.controls, bar, problem.stepper)
        except Exception as exc:  # CFL or linear-solve failure: report, do not crash
            log.warning("nonlinear run failed at outer iteration %d: %s", k, exc)
            return PicardResult(res.controls, res.trajectory, history, False, res)
        tn = traj.l2_norm()
        if prev is None:
            diff = 1.0 if tn > 0 else 0.0
        else:
            d = (traj - prev).l2_norm()
            diff = d / tn if tn > 0 else d
        fn, f0n = weighted_source_norms(src, w, grid.cell_volume)
        history.append(PicardRow(k, res.terminal_norm, traj.terminal_norm(), diff, fn, f0n,
                                 res.cg_iters, eps))
        result = PicardResult(res.controls, traj, history, False, res)
        if not np.isfinite(diff):
            return result
        if diff <= cfg.outer_tol:
            result.converged = True
            return result
        src = nonlinear_sources(traj)
        prev = traj
    log.warning("Picard loop reached max_outer = %d without convergence", cfg.max_outer)
    return result


@dataclass
class DeltaScanRow:
    delta: float
    converged: bool
    outer_iters: int
    final_diff: float
    terminal_norm_nonlinear: float


def delta_scan(deltas, bar: TrajectoryBar, w: WeightBundle, cfg: PicardConfig, dual: DualConfig,
               omega=None, problem: ControlProblem | None = None):
    """Run the loop on ``theta_bar0 + delta * bump`` for each delta.

    Returns the rows and the largest delta that converged (None if none did).
    The bump is ``sin(pi x / Lx) sin(pi y / Ly)``, so delta is its amplitude.
    """
    grid = bar.grid
    if problem is None:
        problem = ControlProblem(bar, w, omega, dual)
    X, Y = grid.cell_centers()
    shape = np.sin(np.pi * X / grid.Lx) * np.sin(np.pi * Y / grid.Ly)
    rows = []
    for d in deltas:
        run_cfg = replace(cfg, delta=max(cfg.delta, d))
        res = picard_control(None, bar.theta_bar0 + d * shape, bar, w, run_cfg, dual,
                             problem=problem)
        last = res.history[-1] if res.history else None
        rows.append(DeltaScanRow(float(d), res.converged, res.iterations,
                                 last.diff if last else float("nan"),
                                 last.terminal_norm_nonlinear if last else float("nan")))
    ok = [r.delta for r in rows if r.converged]
    return rows, (max(ok) if ok else None)
