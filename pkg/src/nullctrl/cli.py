"""Command-line entry point: ``nullctrl run <config> [--check] [--seed N] [--out DIR]``.

Exit codes: 0 ok, 2 configuration error, 3 solver non-convergence,
4 internal error. Every run writes ``manifest.txt`` echoing the resolved
configuration; failures also write ``error.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, build_config, parse_pairs
from .errors import (AdmissibilityError, CflViolation, OverflowPolicyError, ParseError,
                     PoissonNoConverge, ValidationError)
from .forward import LinearStepper, solve_trajectory
from .hum import ControlProblem, hum_solve
from .picard import delta_scan, picard_control
from .verify import carleman_ratio, evaluate_sample, neumann_obstruction, CarlemanReport
from .weights import (build_eta, build_time_profile, build_weights,
                      check_weight_inequalities, write_weights_csv)

log = logging.getLogger("nullctrl")

EXIT_OK, EXIT_CONFIG, EXIT_NOCONVERGE, EXIT_INTERNAL = 0, 2, 3, 4


class NoConvergence(Exception):
    """A pipeline finished but its iterative solver did not converge."""


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


def worker_count():
    """Size of the sample worker pool; ``NULLCTRL_THREADS`` caps it (default 1)."""
    try:
        n = int(os.environ.get("NULLCTRL_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


# -- shared setup ---------------------------------------------------------------

def _weights(cfg: RunConfig, s=None):
    eta = build_eta(cfg.domain, cfg.grid)
    prof = build_time_profile(cfg.grid.T, cfg.grid.nt)
    return build_weights(eta, prof, cfg.s if s is None else s, cfg.lam)


def _bar(cfg: RunConfig):
    _, Y = cfg.grid.cell_centers()
    return solve_trajectory(cfg["trajectory.amplitude"] * np.sin(np.pi * Y / cfg.grid.Ly),
                            cfg.grid)


def _bump(cfg: RunConfig, amp):
    X, Y = cfg.grid.cell_centers()
    return amp * np.sin(np.pi * X / cfg.grid.Lx) * np.sin(np.pi * Y / cfg.grid.Ly)


def _weight_checks(cfg, w, out):
    rep = check_weight_inequalities(w)
    write_csv(out / "weight_checks.csv", ("check", "passed", "worst_relative_violation"),
              [(c.name, c.passed, c.worst) for c in rep.checks])
    return rep


# -- experiments ------------------------------------------------------------------

def run_weight_report(cfg, out):
    w = _weights(cfg)
    write_weights_csv(w, out / "weights.csv")
    rep = _weight_checks(cfg, w, out)
    write_csv(out / "summary.csv", ("checks_passed", "n_checks"),
              [(rep.passed, len(rep.checks))])
    return ["weights.csv", "weight_checks.csv", "summary.csv"]


def run_trajectory(cfg, out):
    g = cfg.grid
    bar = _bar(cfg)
    _, Y = g.cell_centers()
    amp = cfg["trajectory.amplitude"]
    errs = []
    for n, t in enumerate(g.times):
        exact = amp * np.exp(-np.pi ** 2 * t / g.Ly ** 2) * np.sin(np.pi * Y / g.Ly)
        errs.append((t, float(np.abs(bar.theta_bar[n]).max()),
                     float(np.abs(bar.theta_bar[n] - exact).max())))
    write_csv(out / "trajectory.csv", ("t", "theta_bar_max", "linf_error"), errs)
    h2 = max(g.hx, g.hy) ** 2
    worst = max(e[2] for e in errs)
    write_csv(out / "summary.csv", ("linf_error", "bound", "within_bound"),
              [(worst, 5 * abs(amp) * (g.dt + h2), worst <= 5 * abs(amp) * (g.dt + h2))])
    return ["trajectory.csv", "summary.csv"]


def run_linear(cfg, out):
    g = cfg.grid
    w, bar = _weights(cfg), _bar(cfg)
    problem = ControlProblem(bar, w, cfg.domain.omega, cfg.dual)
    y0 = np.zeros(g.nvel)
    th0 = _bump(cfg, cfg["data.amplitude"])
    x0 = np.sqrt(g.cell_volume * np.sum(th0 ** 2))
    rows, cg_rows, enorm_rows = [], [], []
    ok = True
    for eps in cfg.epsilons():
        res = hum_solve(y0, th0, None, bar, w, cfg.dual, problem=problem, eps=eps)
        ctrl = res.controls
        rows.append((eps, res.eps_abs, res.terminal_norm, x0, res.kkt_residual, res.scale,
                     res.cg_iters, res.converged, ctrl.vanishes_outside_omega(),
                     ctrl.vj is None))
        cg_rows += [(eps,) + tuple(r) for r in res.cg_log]
        enorm_rows += [(eps, k, v) for k, v in res.e_norm_report.items()]
        ok &= res.converged
    write_csv(out / "summary.csv",
              ("epsilon", "epsilon_abs", "terminal_norm", "initial_norm", "kkt_residual",
               "scale", "cg_iters", "converged", "controls_in_omega", "no_velocity_control"),
              rows)
    write_csv(out / "cg_log.csv", ("epsilon", "iter", "J", "grad_norm"), cg_rows)
    write_csv(out / "e_norm.csv", ("epsilon", "component", "log10_norm"), enorm_rows)
    if not ok:
        raise NoConvergence("dual CG did not reach cg_tol")
    return ["summary.csv", "cg_log.csv", "e_norm.csv"]


def run_nonlinear(cfg, out):
    g = cfg.grid
    w, bar = _weights(cfg), _bar(cfg)
    th0 = bar.theta_bar0 + _bump(cfg, cfg.picard.delta)
    res = picard_control(np.zeros(g.nvel), th0, bar, w, cfg.picard, cfg.dual,
                         cfg.domain.omega)
    write_csv(out / "history.csv",
              ("outer_iter", "terminal_norm_linear", "terminal_norm_nonlinear", "diff",
               "log10_f_norm_weighted", "log10_f0_norm_weighted", "cg_iters", "epsilon"),
              [(r.outer_iter, r.terminal_norm_linear, r.terminal_norm_nonlinear, r.diff,
                r.f_norm_weighted, r.f0_norm_weighted, r.cg_iters, r.epsilon)
               for r in res.history])
    last = res.history[-1] if res.history else None
    write_csv(out / "summary.csv",
              ("converged", "outer_iters", "final_diff", "terminal_norm_nonlinear",
               "controls_in_omega", "no_velocity_control"),
              [(res.converged, res.iterations, last.diff if last else float("nan"),
                last.terminal_norm_nonlinear if last else float("nan"),
                res.controls.vanishes_outside_omega(), res.controls.vj is None)])
    files = ["history.csv", "summary.csv"]
    if cfg["picard.delta_sweep"]:
        # empirical reach of the loop; failures here are data, not errors
        scan, best = delta_scan(cfg["picard.delta_sweep"], bar, w, cfg.picard, cfg.dual,
                                cfg.domain.omega)
        write_csv(out / "delta_scan.csv",
                  ("delta", "converged", "outer_iters", "final_diff", "terminal_norm_nonlinear",
                   "largest_converged_delta"),
                  [(r.delta, r.converged, r.outer_iters, r.final_diff, r.terminal_norm_nonlinear,
                    "none" if best is None else best) for r in scan])
        files.insert(1, "delta_scan.csv")
    if not res.converged:
        raise NoConvergence("Picard loop did not converge")
    return files


def _carleman(cfg, w, bar):
    n, seed = cfg["samples"], cfg.seed
    workers = min(worker_count(), n)
    alpha = cfg["verify.alpha_family"]
    if workers == 1:
        return carleman_ratio(n, w, bar, cfg.domain.omega, alpha, seed)
    chunks = np.array_split(np.arange(seed, seed + n), workers)

    def job(seeds):
        st = LinearStepper(bar.grid)
        return [evaluate_sample(int(s), w, bar, cfg.domain.omega, alpha, stepper=st)
                for s in seeds]

    with ThreadPoolExecutor(workers) as ex:
        parts = list(ex.map(job, chunks))
    return CarlemanReport([smp for p in parts for smp in p], w.s, w.lam, bar.grid, alpha)


def run_carleman(cfg, out):
    bar = _bar(cfg)
    rep = _carleman(cfg, _weights(cfg), bar)
    rep.write_csv(out / "carleman_samples.csv")
    rows = [(cfg.s, rep.max_log10_ratio, rep.median_log10_ratio, rep.all_finite)]
    files = ["carleman_samples.csv"]
    for s in cfg["verify.s_sweep"]:
        r = _carleman(cfg, _weights(cfg, s), bar)
        name = f"carleman_samples_s{s:g}.csv"
        r.write_csv(out / name)
        files.append(name)
        rows.append((s, r.max_log10_ratio, r.median_log10_ratio, r.all_finite))
    write_csv(out / "summary.csv", ("s", "max_log10_ratio", "median_log10_ratio", "all_finite"),
              rows)
    return files + ["summary.csv"]


def run_neumann(cfg, out):
    g = cfg.grid
    X, Y = g.cell_centers()
    area = g.Lx * g.Ly
    theta0 = cfg["neumann.mass"] / area + np.cos(np.pi * X / g.Lx) * np.cos(np.pi * Y / g.Ly)
    y = None
    a = cfg["neumann.advection"]
    if a:
        # solenoidal cellular flow from a stream function vanishing on the walls
        xn = np.arange(g.nx + 1) * g.hx
        yn = np.arange(g.ny + 1) * g.hy
        XN, YN = np.meshgrid(xn, yn, indexing="ij")
        st = a * np.sin(np.pi * XN / g.Lx) * np.sin(np.pi * YN / g.Ly)
        y = (np.diff(st, axis=1) / g.hy, -np.diff(st, axis=0) / g.hx)
    rep = neumann_obstruction(theta0, g, y)
    h2 = g.cell_volume
    write_csv(out / "mass.csv", ("t", "mass", "l1_norm"),
              [(t, h2 * float(np.sum(th)), h2 * float(np.sum(np.abs(th))))
               for t, th in zip(g.times, rep.theta)])
    write_csv(out / "summary.csv", ("mass0", "massT", "drift", "l1_T", "obstructed", "message"),
              [(rep.mass0, rep.massT, rep.drift, rep.l1_T, rep.obstructed, rep.message)])
    return ["mass.csv", "summary.csv"]


PIPELINES = {
    "weight-report": run_weight_report,
    "trajectory": run_trajectory,
    "linear-control": run_linear,
    "nonlinear-control": run_nonlinear,
    "carleman-ratio": run_carleman,
    "neumann-demo": run_neumann,
}


def _record_error(out: Path, code, exc):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "error.json", "w") as fh:
        json.dump({"exit_code": code, "error": type(exc).__name__, "message": str(exc)},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")


def run(cfg: RunConfig, check_only=False) -> int:
    """Execute the configured pipeline and write artifacts; returns the exit status."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    status, files = EXIT_OK, []
    try:
        if check_only:
            rep = _weight_checks(cfg, _weights(cfg), out)
            files = ["weight_checks.csv"]
            if not rep.passed:
                raise ValidationError("weight inequality check failed")
        else:
            files = PIPELINES[cfg.experiment](cfg, out)
    except (ValidationError, AdmissibilityError, OverflowPolicyError) as exc:
        status = EXIT_CONFIG
        _record_error(out, status, exc)
    except (NoConvergence, PoissonNoConverge, CflViolation) as exc:
        status = EXIT_NOCONVERGE
        _record_error(out, status, exc)
    except Exception as exc:  # pragma: no cover - last-resort record
        log.exception("internal error")
        status = EXIT_INTERNAL
        _record_error(out, status, exc)
    with open(out / "manifest.txt", "w") as fh:
        fh.write(cfg.to_text())
        fh.write(f"mode={'check' if check_only else 'run'}\n")
        fh.write(f"status={status}\n")
        fh.write(f"files={','.join(files)}\n")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nullctrl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("run", help="run an experiment from a key=value config file")
    rp.add_argument("config")
    rp.add_argument("--check", action="store_true",
                    help="validate and report weight inequalities only")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--out")
    rp.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            values = parse_pairs(fh.read())
        if args.seed is not None:
            values["seed"] = args.seed
        if args.out is not None:
            values["output_dir"] = args.out
        cfg = build_config(values)
    except (OSError, ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if args.out:
            _record_error(Path(args.out), EXIT_CONFIG, exc)
        return EXIT_CONFIG
    status = run(cfg, args.check)
    if status:
        print(f"run failed with status {status}; see {cfg.output_dir}/error.json",
              file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
