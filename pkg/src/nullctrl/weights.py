"""Carleman weight functions on a box.

The weights blow up like ``l(t)**-8`` at the time endpoints, so for the
default parameters ``exp(-s * alpha_star)`` is far below the smallest double.
Everything here is therefore kept in terms of the exponents; callers
exponentiate last through :func:`exp_flush`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, OverflowPolicyError

FLUSH_BELOW = 1e-300
_LOG_FLUSH = np.log(FLUSH_BELOW)


@dataclass(frozen=True)
class DomainSpec:
    lengths: tuple = (1.0, 1.0)
    omega: tuple = ((0.3, 0.7), (0.3, 0.7))
    omega0: tuple = ((0.4, 0.6), (0.4, 0.6))
    T: float = 1.0

    def __post_init__(self):
        n = len(self.lengths)
        if n not in (2, 3):
            raise ValueError("only N = 2 or 3 is supported")
        if len(self.omega) != n or len(self.omega0) != n:
            raise ValueError("omega and omega0 need one interval per axis")
        if self.T <= 0:
            raise ValueError("T must be positive")
        for L, (a, b), (c, d) in zip(self.lengths, self.omega, self.omega0):
            if not 0 < a < b < L:
                raise ValueError(f"omega interval ({a}, {b}) is not inside (0, {L})")
            if not a < c < d < b:
                raise ValueError(f"closure of omega0 ({c}, {d}) is not inside omega ({a}, {b})")

    @property
    def N(self):
        return len(self.lengths)

    @property
    def Lx(self):
        return self.lengths[0]

    @property
    def Ly(self):
        return self.lengths[1]

    @property
    def center(self):
        return tuple(L / 2 for L in self.lengths)


@dataclass(frozen=True)
class EtaField:
    values: np.ndarray
    coords: tuple
    grad_norm: np.ndarray
    grad_min_off_omega0: float

    @property
    def sup(self):
        return float(self.values.max())


def _node_coords(domain, cells):
    return tuple(np.linspace(0.0, L, n + 1) for L, n in zip(domain.lengths, cells))


def _inside(coords, box, closed=False):
    grids = np.meshgrid(*coords, indexing="ij")
    mask = np.ones(grids[0].shape, bool)
    for X, (a, b) in zip(grids, box):
        mask &= (X >= a) & (X <= b) if closed else (X > a) & (X < b)
    return mask


def build_eta(domain: DomainSpec, cells) -> EtaField:
    """Product bump ``c * prod x_i (L_i - x_i)`` with sup 1 on the vertex grid.

    ``cells`` is a cell count per axis (or a grid exposing ``nx``/``ny``).
    The only interior critical point is the box centre, which must lie in
    omega0. The four box corners are critical for any function vanishing on
    both adjacent edges and are left out of the gradient check.
    """
    if hasattr(cells, "nx"):
        cells = (cells.nx, cells.ny)
    if len(cells) != domain.N:
        raise ValueError("cell counts must match the domain dimension")
    for c, (a, b) in zip(domain.center, domain.omega0):
        if not a < c < b:
            raise AdmissibilityError(
                f"omega0 must contain the box centre {domain.center}")
    coords = _node_coords(domain, cells)
    X = np.meshgrid(*coords, indexing="ij")
    factors = [x * (L - x) / (L / 2) ** 2 for x, L in zip(X, domain.lengths)]
    values = np.prod(factors, axis=0)
    grads = []
    for k, (x, L) in enumerate(zip(X, domain.lengths)):
        dk = (L - 2 * x) / (L / 2) ** 2
        others = [f for m, f in enumerate(factors) if m != k]
        grads.append(dk * np.prod(others, axis=0))
    grad_norm = np.sqrt(sum(g ** 2 for g in grads))

    boundary = np.zeros(values.shape, bool)
    for ax in range(domain.N):
        sl = [slice(None)] * domain.N
        sl[ax] = [0, -1]
        boundary[tuple(sl)] = True
    values[boundary] = 0.0
    edge_count = sum(np.isin(np.indices(values.shape)[ax], [0, n])
                     for ax, n in enumerate(cells))
    corners = edge_count == domain.N
    off = ~_inside(coords, domain.omega0, closed=False) & ~corners
    gmin = float(grad_norm[off].min())
    interior = ~boundary
    if not np.all(values[interior] > 0):
        raise AdmissibilityError("eta must be positive at interior nodes")
    if not gmin > 0:
        raise AdmissibilityError("|grad eta| vanishes at a node outside omega0")
    return EtaField(values, coords, grad_norm, gmin)


@dataclass(frozen=True)
class TimeProfile:
    T: float
    t: np.ndarray
    ell: np.ndarray
    ell_tilde: np.ndarray

    @property
    def ell_max(self):
        return ell_profile(np.array(self.T / 2), self.T).item()


def ell_profile(t, T):
    """Time profile: ``t`` near 0, ``T - t`` near T, C^2 quintic blend between.

    On ``(T/4, 3T/4)`` the blend is the even quartic in ``u = t - T/2`` that
    matches value, slope and curvature of the linear branches at the junctions.
    """
    t = np.asarray(t, float)
    u = (t - T / 2) / T
    mid = T * (13.0 / 32.0 - 3.0 * u ** 2 + 8.0 * u ** 4)
    return np.where(t <= T / 4, t, np.where(t >= 3 * T / 4, T - t, mid))


def build_time_profile(T, nt) -> TimeProfile:
    if nt < 8:
        raise ValueError("nt must be at least 8")
    t = np.linspace(0.0, T, nt + 1)
    ell = ell_profile(t, T)
    lmax = ell_profile(np.array(T / 2), T).item()
    ell_tilde = np.where(t <= T / 2, lmax, ell)
    return TimeProfile(T, t, ell, ell_tilde)


@dataclass(frozen=True)
class WeightBundle:
    """Space-time weights on the vertex grid, plus their space extrema.

    Arrays in time have length ``nt + 1``; entries where the profile vanishes
    hold ``+inf`` and are flagged in ``infinite`` / ``infinite_tilde``.
    """
    s: float
    lam: float
    t: np.ndarray
    T: float
    eta: EtaField
    alpha: np.ndarray
    xi: np.ndarray
    alpha_star: np.ndarray
    xi_star: np.ndarray
    alpha_hat: np.ndarray
    xi_hat: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    beta_star: np.ndarray
    gamma_star: np.ndarray
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    infinite: np.ndarray = field(repr=False)
    infinite_tilde: np.ndarray = field(repr=False)

    def log_time_weight(self, exp_coeffs, power=0.0, family="beta", base="hat"):
        """Natural log of ``exp(sum_k c_k * s * A_k(t)) * base(t)**power``.

        ``exp_coeffs`` maps aggregate names (``'hat'``, ``'star'``) to
        coefficients, e.g. ``{'hat': -4, 'star': -1}`` for
        ``exp(-4 s beta_hat - s beta_star)``. ``base`` picks ``gamma_hat``
        (``'hat'``) or ``gamma_star`` (``'star'``) for the power factor.
        Entries at flagged endpoints come out as ``-inf``/``+inf`` by the sign
        of the exponent.
        """
        a = {"alpha": ("alpha", "xi"), "beta": ("beta", "gamma")}[family]
        agg = {"hat": getattr(self, f"{a[0]}_hat"), "star": getattr(self, f"{a[0]}_star")}
        flag = self.infinite if family == "alpha" else self.infinite_tilde
        out = np.zeros_like(self.t)
        total = 0.0
        for name, c in exp_coeffs.items():
            vals = np.where(flag, 0.0, agg[name])
            out += c * self.s * vals
            total += c
        if power:
            b = getattr(self, f"{a[1]}_{base}")
            out += power * np.log(np.where(flag, 1.0, b))
        if total:
            out = np.where(flag, np.sign(total) * np.inf, out)
        elif power:
            out = np.where(flag, np.sign(power) * np.inf, out)
        return out


def exp_flush(logw, interior=None):
    """Exponentiate log-weights, flushing values below 1e-300 to exactly 0."""
    logw = np.asarray(logw, float)
    if interior is not None and not np.all(np.isfinite(np.exp(np.minimum(logw[interior], 700)))):
        raise OverflowPolicyError("non-finite weight at an interior node")
    if np.any(np.isnan(logw)):
        raise OverflowPolicyError("NaN in weight exponent")
    with np.errstate(over="ignore"):
        w = np.exp(logw)
    w[logw < _LOG_FLUSH] = 0.0
    return w


def _family(eta_vals, lam, prof_vals, flag):
    e_sup = np.exp(2 * lam * eta_vals.max())
    e_eta = np.exp(lam * eta_vals)
    p8 = np.where(flag, 1.0, prof_vals) ** 8
    shape = (-1,) + (1,) * eta_vals.ndim
    with np.errstate(over="ignore"):
        a = (e_sup - e_eta)[None] / p8.reshape(shape)
        x = e_eta[None] / p8.reshape(shape)
    a[flag] = np.inf
    x[flag] = np.inf
    red = tuple(range(1, a.ndim))
    a_star = np.where(flag, np.inf, (e_sup - e_eta.min()) / p8)
    a_hat = np.where(flag, np.inf, (e_sup - e_eta.max()) / p8)
    x_star = np.where(flag, np.inf, e_eta.min() / p8)
    x_hat = np.where(flag, np.inf, e_eta.max() / p8)
    # agree with the brute-force extrema of the stored fields
    assert np.allclose(a_star[~flag], a[~flag].max(axis=red), rtol=1e-14)
    return a, x, a_star, x_star, a_hat, x_hat


def build_weights(eta: EtaField, prof: TimeProfile, s, lam) -> WeightBundle:
    if s < 1 or lam < 1:
        raise ValueError("need s >= 1 and lambda >= 1")
    flag = prof.ell <= 0.0
    flag_t = prof.ell_tilde <= 0.0
    alpha, xi, a_star, x_star, a_hat, x_hat = _family(eta.values, lam, prof.ell, flag)
    beta, gamma, b_star, g_star, b_hat, g_hat = _family(eta.values, lam, prof.ell_tilde, flag_t)
    for name, arr, fl in (("alpha", alpha, flag), ("xi", xi, flag),
                          ("beta", beta, flag_t), ("gamma", gamma, flag_t)):
        if not np.all(np.isfinite(arr[~fl])):
            raise OverflowPolicyError(f"{name} is non-finite at an interior node")
        if not np.all(np.isfinite(np.log(arr[~fl]))):
            raise OverflowPolicyError(f"log {name} is non-finite at an interior node")
    return WeightBundle(float(s), float(lam), prof.t, prof.T, eta,
                        alpha, xi, a_star, x_star, a_hat, x_hat,
                        beta, gamma, b_star, g_star, b_hat, g_hat, flag, flag_t)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    node: tuple


@dataclass
class WeightReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _leq(name, lhs, rhs, slack):
    # relative violation of lhs <= rhs, worst node reported
    viol = (lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
    idx = np.unravel_index(np.argmax(viol), viol.shape)
    worst = float(viol[idx])
    return CheckResult(name, worst <= slack, worst, tuple(int(i) for i in idx))


def check_weight_inequalities(w: WeightBundle, slack=1e-12) -> WeightReport:
    inner = ~w.infinite
    sh = (-1,) + (1,) * w.eta.values.ndim
    a = w.alpha[inner]
    x = w.xi[inner]
    a_star = w.alpha_star[inner].reshape(sh)
    a_hat = w.alpha_hat[inner].reshape(sh)
    x_star = w.xi_star[inner].reshape(sh)
    x_hat = w.xi_hat[inner].reshape(sh)
    checks = [
        _leq("alpha<=alpha_star", a, a_star + 0 * a, slack),
        _leq("alpha_hat<=alpha", a_hat + 0 * a, a, slack),
        _leq("xi_star<=xi", x_star + 0 * x, x, slack),
        _leq("xi<=xi_hat", x, x_hat + 0 * x, slack),
        # exp(-2 s a) <= exp(-4 s a + 2 s a*), compared through the exponents
        _leq("exp(-2sa)<=exp(-4sa+2sa*)", -2 * w.s * a, -4 * w.s * a + 2 * w.s * a_star, slack),
    ]
    late = (w.t > w.T / 2) & inner & ~w.infinite_tilde
    agree = 0.0
    for fa, fb in ((w.alpha, w.beta), (w.xi, w.gamma)):
        if late.any():
            d = np.abs(fa[late] - fb[late]) / np.abs(fa[late])
            agree = max(agree, float(d.max()))
    checks.append(CheckResult("beta==alpha on (T/2,T]", agree <= slack, agree, ()))
    early = w.t <= w.T / 2
    spread = 0.0
    for arr in (w.beta, w.gamma):
        e = arr[early]
        spread = max(spread, float((np.abs(e - e[0]) / np.abs(e[0])).max()))
    checks.append(CheckResult("beta constant on [0,T/2]", spread <= slack, spread, ()))
    return WeightReport(checks)


def constant_eta_bundle(w: WeightBundle, value=0.5) -> WeightBundle:
    """Degenerate bundle with eta forced constant; used to exercise the checks."""
    vals = np.full_like(w.eta.values, value)
    eta = EtaField(vals, w.eta.coords, np.zeros_like(vals), 0.0)
    prof = TimeProfile(w.T, w.t, ell_profile(w.t, w.T),
                       np.where(w.t <= w.T / 2, ell_profile(np.array(w.T / 2), w.T).item(),
                                ell_profile(w.t, w.T)))
    return build_weights(eta, prof, w.s, w.lam)


CSV_COLUMNS = ("t", "alpha_star", "xi_star", "alpha_hat", "xi_hat",
               "beta_star", "gamma_star", "beta_hat", "gamma_hat")


def write_weights_csv(w: WeightBundle, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for n in range(len(w.t)):
            wr.writerow([repr(float(getattr(w, c)[n])) for c in CSV_COLUMNS])
