"""Desk-scale checks of the weighted observability inequality and the Neumann obstruction.

The Carleman weights at the default parameters reach ``exp(+-1e5)`` and more,
so every integral here is carried as a natural logarithm and the ratio
``LHS / RHS`` is reported through its base-10 logarithm. Decimal strings such
as ``3.2e+67012`` are produced for the CSV table so the magnitudes stay
readable without overflowing a double.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .adjoint import solve_adjoint
from .forward import SourcePair, TrajectoryBar, solve_heat_neumann
from .grid import GridSpec, box_mask
from .weights import WeightBundle

LN10 = math.log(10.0)
N_MODES = 8
N_TIME_MODES = 3
SAMPLE_COLUMNS = ("seed", "lhs", "rhs", "ratio", "s", "lambda", "grid",
                  "log10_lhs", "log10_rhs", "log10_ratio")


def format_log10(x):
    """Scientific-notation string for ``10**x`` that also works past the double range."""
    if x == -np.inf:
        return "0"
    if not np.isfinite(x):
        return "inf"
    e = math.floor(x)
    m = 10.0 ** (x - e)
    if m >= 9.9999999999995:  # rounding would print 10.000...
        m, e = 1.0, e + 1
    return f"{m:.12f}e{e:+d}"


# -- random smooth data --------------------------------------------------------

def _sine_basis(x, y, Lx, Ly, n=N_MODES):
    """Stack of ``sin(k pi x / Lx) sin(l pi y / Ly)``, shape ``(n, n) + x.shape``."""
    k = np.arange(1, n + 1)
    sx = np.sin(np.pi * k[:, None, None] * x[None] / Lx)
    sy = np.sin(np.pi * k[:, None, None] * y[None] / Ly)
    return sx[:, None] * sy[None, :]


def _combine(coef, x, y, Lx, Ly):
    return np.einsum("kl,kl...->...", coef, _sine_basis(x, y, Lx, Ly))


def _unit(c):
    n = np.linalg.norm(c)
    return c / n if n > 0 else c


@dataclass
class SampleData:
    phiT: np.ndarray   # packed, discretely divergence-free
    psiT: np.ndarray
    g: SourcePair


def sample_data(seed, grid: GridSpec, zero=False) -> SampleData:
    """Random low-frequency adjoint data; the coefficients depend only on ``seed``.

    ``phiT`` is the discrete curl of a stream function, so it is solenoidal
    on the MAC grid without a projection. Space-time sources use cosine modes
    in time.
    """
    Lx, Ly, T = grid.Lx, grid.Ly, grid.T
    if zero:
        z = np.zeros(grid.nvel)
        return SampleData(z, np.zeros((grid.nx, grid.ny)), SourcePair.zeros(grid))
    rng = np.random.default_rng(seed)
    shape = (N_MODES, N_MODES)
    c_stream = _unit(rng.standard_normal(shape))
    c_psi = _unit(rng.standard_normal(shape))
    c_gu = _unit(rng.standard_normal((N_TIME_MODES,) + shape))
    c_gv = _unit(rng.standard_normal((N_TIME_MODES,) + shape))
    c_g0 = _unit(rng.standard_normal((N_TIME_MODES,) + shape))

    xn = np.arange(grid.nx + 1) * grid.hx
    yn = np.arange(grid.ny + 1) * grid.hy
    XN, YN = np.meshgrid(xn, yn, indexing="ij")
    stream = _combine(c_stream, XN, YN, Lx, Ly)
    u = np.diff(stream, axis=1) / grid.hy
    v = -np.diff(stream, axis=0) / grid.hx
    phiT = grid.pack(u, v)

    X, Y = grid.cell_centers()
    psiT = _combine(c_psi, X, Y, Lx, Ly)

    Xu, Yu = grid.u_faces()
    Xv, Yv = grid.v_faces()
    bu = np.stack([_combine(c, Xu, Yu, Lx, Ly) for c in c_gu])
    bv = np.stack([_combine(c, Xv, Yv, Lx, Ly) for c in c_gv])
    b0 = np.stack([_combine(c, X, Y, Lx, Ly) for c in c_g0])
    tk = grid.times[:-1]
    cos_t = np.cos(np.pi * np.arange(N_TIME_MODES)[:, None] * tk[None] / T)
    fu = np.einsum("mt,mij->tij", cos_t, bu)
    fv = np.einsum("mt,mij->tij", cos_t, bv)
    f0 = np.einsum("mt,mij->tij", cos_t, b0)
    g = SourcePair(np.stack([grid.pack(a, b) for a, b in zip(fu, fv)]), f0)
    return SampleData(phiT, psiT, g)


# -- the inequality -------------------------------------------------------------

def _log_time_integral(logw, sq, dt, trapezoid=True):
    """log of ``sum_n c_n dt exp(logw_n) sq_n``; trapezoid end weights for level data."""
    c = np.full(len(sq), dt)
    if trapezoid:
        c[0] *= 0.5
        c[-1] *= 0.5
    with np.errstate(divide="ignore"):
        terms = logw + np.log(np.where(sq > 0, sq, 1.0)) + np.log(c)
    terms = np.where(sq > 0, terms, -np.inf)
    return float(logsumexp(terms)) if np.any(sq > 0) else -np.inf


def _lse(*vals):
    vals = [v for v in vals if v > -np.inf]
    return float(logsumexp(vals)) if vals else -np.inf


def carleman_terms(adj, g: SourcePair, w: WeightBundle, omega, use_alpha_family=False):
    """Natural logs of each integral in the inequality for one adjoint solution.

    Source integrals use the weight at the start of each step; level data
    use the trapezoid rule in time. With the alpha family the powers of ``s``
    are included and the initial-state terms are not.
    """
    grid = adj.grid
    h2, dt, nt = grid.cell_volume, grid.dt, grid.nt
    fam = "alpha" if use_alpha_family else "beta"
    ls = math.log(w.s) if use_alpha_family else 0.0
    wt = w.log_time_weight
    phi_sq = h2 * np.sum(adj.phi ** 2, axis=1)
    psi = adj.psi.reshape(nt + 1, -1)
    psi_sq = h2 * np.sum(psi ** 2, axis=1)
    mask = box_mask(grid, omega).ravel().astype(bool)
    psi_obs = h2 * np.sum(psi[:, mask] ** 2, axis=1)
    g_sq = h2 * (np.sum(g.f ** 2, axis=1) + np.sum(g.f0.reshape(nt, -1) ** 2, axis=1))

    out = {
        "phi": 4 * ls + _log_time_integral(wt({"star": -5}, 4, fam, "star"), phi_sq, dt),
        "psi": 5 * ls + _log_time_integral(wt({"star": -5}, 5, fam, "star"), psi_sq, dt),
        "source": _log_time_integral(wt({"star": -3}, 0, fam)[:nt], g_sq, dt, trapezoid=False),
        "observation": 12 * ls + _log_time_integral(
            wt({"hat": -4, "star": -1}, 49 / 4, fam, "hat"), psi_obs, dt),
    }
    if not use_alpha_family:
        with np.errstate(divide="ignore"):
            out["initial"] = math.log(phi_sq[0] + psi_sq[0]) if phi_sq[0] + psi_sq[0] > 0 else -np.inf
    return out


@dataclass
class CarlemanSample:
    seed: int
    log_lhs: float
    log_rhs: float
    terms: dict = field(default_factory=dict)

    @property
    def log_ratio(self):
        """Natural log of LHS/RHS; ``-inf`` encodes a recorded ratio of 0."""
        if self.log_lhs == -np.inf:
            return -np.inf
        if self.log_rhs == -np.inf:
            return np.inf
        return self.log_lhs - self.log_rhs

    @property
    def log10_ratio(self):
        return self.log_ratio / LN10

    @property
    def ratio(self):
        """LHS/RHS as a float (``inf`` when it is beyond the double range)."""
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_ratio))


@dataclass
class CarlemanReport:
    samples: list
    s: float
    lam: float
    grid: GridSpec
    use_alpha_family: bool

    @property
    def log10_ratios(self):
        return np.array([smp.log10_ratio for smp in self.samples])

    @property
    def max_log10_ratio(self):
        return float(np.max(self.log10_ratios))

    @property
    def median_log10_ratio(self):
        return float(np.median(self.log10_ratios))

    @property
    def all_finite(self):
        return bool(np.all(np.isfinite(self.log10_ratios)))

    def rows(self):
        gname = f"{self.grid.nx}x{self.grid.ny}x{self.grid.nt}"
        for smp in self.samples:
            lhs, rhs = smp.log_lhs / LN10, smp.log_rhs / LN10
            r = smp.log10_ratio
            yield (smp.seed, format_log10(lhs), format_log10(rhs), format_log10(r),
                   repr(float(self.s)), repr(float(self.lam)), gname,
                   repr(float(lhs)), repr(float(rhs)), repr(float(r)))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SAMPLE_COLUMNS)
            wr.writerows(self.rows())


def evaluate_sample(seed, w: WeightBundle, bar: TrajectoryBar, omega, use_alpha_family=False,
                    zero=False, stepper=None) -> CarlemanSample:
    data = sample_data(seed, bar.grid, zero=zero)
    adj = solve_adjoint(data.phiT, data.psiT, data.g, bar, stepper)
    t = carleman_terms(adj, data.g, w, omega, use_alpha_family)
    lhs = _lse(t["phi"], t["psi"], t.get("initial", -np.inf))
    rhs = _lse(t["source"], t["observation"])
    return CarlemanSample(int(seed), lhs, rhs, t)


def carleman_ratio(samples: int, w: WeightBundle, bar: TrajectoryBar, omega=((0.3, 0.7), (0.3, 0.7)),
                   use_alpha_family=False, seed=0, stepper=None) -> CarlemanReport:
    """Evaluate the inequality on ``samples`` random data sets with seeds ``seed, seed+1, ...``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if stepper is None:
        from .forward import LinearStepper
        stepper = LinearStepper(bar.grid)
    out = [evaluate_sample(seed + i, w, bar, omega, use_alpha_family, stepper=stepper)
           for i in range(samples)]
    return CarlemanReport(out, w.s, w.lam, bar.grid, use_alpha_family)


# -- Neumann obstruction ---------------------------------------------------------

@dataclass
class NeumannReport:
    mass0: float
    massT: float
    drift: float
    l1_T: float
    obstructed: bool
    message: str
    theta: np.ndarray = field(repr=False, default=None)


def neumann_obstruction(theta0, grid: GridSpec, y=None, tol=1e-10) -> NeumannReport:
    """Run the zero-flux heat equation and report conservation of the mean.

    With zero-flux walls, ``int theta(T) = int theta0`` for any control
    supported away from the walls that integrates to zero, so a nonzero
    initial mass bounds ``||theta(T)||_L1`` from below and null control is
    impossible.
    """
    theta = solve_heat_neumann(theta0, grid, y)
    h2 = grid.cell_volume
    m0 = h2 * float(np.sum(theta[0]))
    mT = h2 * float(np.sum(theta[-1]))
    l1 = h2 * float(np.sum(np.abs(theta[-1])))
    if abs(m0) > tol:
        msg = (f"initial mass {m0:.6g} is conserved; ||theta(T)||_L1 >= {abs(m0):.6g}, "
               "so theta(T) = 0 is unreachable")
        obstructed = True
    else:
        msg = "initial mass is zero: no obstruction implied"
        obstructed = False
    return NeumannReport(m0, mT, abs(mT - m0), l1, obstructed, msg, theta)
