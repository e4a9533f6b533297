import numpy as np
import pytest
import sympy as sp

from nullctrl.errors import CflViolation, StructureError
from nullctrl.forward import (ControlPair, FlowState, LinearStepper, SourcePair, TrajectoryBar,
                              control_masks, nonlinear_sources, scalar_advection,
                              solve_heat_neumann, solve_linear, solve_nonlinear,
                              solve_trajectory, step_linear, step_nonlinear)
from nullctrl.grid import GridSpec, divergence, operators

from conftest import bump


# -- target trajectory ---------------------------------------------------------------

def _trajectory_error(n, nt, T=0.5):
    g = GridSpec(n, n, nt, T=T)
    _, Y = g.cell_centers()
    bar = solve_trajectory(np.sin(np.pi * Y), g)
    exact = np.exp(-np.pi ** 2 * g.times)[:, None, None] * np.sin(np.pi * Y)[None]
    return np.abs(bar.theta_bar - exact).max(), g


def test_trajectory_separation_of_variables():
    err, g = _trajectory_error(32, 200)
    assert err <= 5 * (g.dt + g.hy ** 2)


def test_trajectory_structure_and_pressure():
    g = GridSpec(12, 10, 16)
    _, Y = g.cell_centers()
    bar = solve_trajectory(np.sin(np.pi * Y) + 0.3 * np.sin(2 * np.pi * Y), g)
    assert np.abs(bar.theta_bar - bar.theta_bar[:, :1, :]).max() <= 1e-12
    ops = operators(g)
    for n in (0, 7, 16):
        # grad p_bar balances the buoyancy theta_bar e_N on every interior face
        resid = ops.G @ bar.p_bar[n].ravel() - ops.B @ bar.theta_bar[n].ravel()
        assert np.abs(resid).max() < 1e-12
        assert abs(bar.p_bar[n].mean()) < 1e-14


def test_trajectory_zero():
    g = GridSpec(8, 8, 8)
    bar = solve_trajectory(np.zeros((8, 8)), g)
    assert not bar.theta_bar.any() and not bar.p_bar.any() and not bar.grad_theta_bar.any()


def test_trajectory_rejects_horizontal_variation():
    g = GridSpec(8, 8, 8)
    X, _ = g.cell_centers()
    with pytest.raises(StructureError):
        solve_trajectory(np.sin(np.pi * X), g)


# -- linear system ----------------------------------------------------------------------

def test_zero_in_zero_out(setup16):
    _, g, bar, _ = setup16
    tr = solve_linear(None, np.zeros((16, 16)), None, None, bar)
    assert not tr.y.any() and not tr.theta.any()


def test_vertical_profile_gives_no_flow():
    g = GridSpec(12, 12, 10)
    _, Y = g.cell_centers()
    bar = TrajectoryBar.zero(g)
    tr = solve_linear(None, 1.0 + Y ** 2, None, None, bar)
    # buoyancy of a vertical profile is a discrete gradient, so the first
    # step is pure pressure; afterwards the wall boundary layers break the
    # x-independence and flow starts
    assert np.abs(tr.y[1]).max() <= 1e-12
    assert np.abs(tr.y[2]).max() > 1e-6


def test_horizontal_profile_drives_flow():
    g = GridSpec(12, 12, 10)
    X, _ = g.cell_centers()
    tr = solve_linear(None, np.cos(np.pi * X), None, None, TrajectoryBar.zero(g))
    assert np.abs(tr.y).max() > 1e-3


def test_divergence_free_every_step(setup16, rng):
    _, g, bar, _ = setup16
    src = SourcePair(rng.standard_normal((g.nt, g.nvel)), rng.standard_normal((g.nt, 16, 16)))
    tr = solve_linear(rng.standard_normal(g.nvel), rng.standard_normal((16, 16)), src, None, bar)
    D = operators(g).D
    assert max(np.abs(D @ tr.y[n]).max() for n in range(1, g.nt + 1)) < 1e-10


def test_superposition(setup16, stepper16, rng):
    domain, g, bar, _ = setup16
    mask, _ = control_masks(g, domain.omega)

    def data():
        return (rng.standard_normal(g.nvel), rng.standard_normal((16, 16)),
                SourcePair(rng.standard_normal((g.nt, g.nvel)), rng.standard_normal((g.nt, 16, 16))),
                ControlPair(rng.standard_normal((g.nt, 16, 16)), mask))

    a, b = data(), data()
    ta = solve_linear(*a[:3], a[3], bar, stepper16)
    tb = solve_linear(*b[:3], b[3], bar, stepper16)
    tab = solve_linear(a[0] + b[0], a[1] + b[1], a[2] + b[2],
                       ControlPair(a[3].v0 + b[3].v0, mask), bar, stepper16)
    scale = np.abs(tab.theta).max() + np.abs(tab.y).max()
    assert np.abs(ta.y + tb.y - tab.y).max() <= 1e-10 * scale
    assert np.abs(ta.theta + tb.theta - tab.theta).max() <= 1e-10 * scale


def test_step_linear_matches_solve(setup16, stepper16, rng):
    _, g, bar, _ = setup16
    th0 = rng.standard_normal((16, 16))
    src = SourcePair(rng.standard_normal((g.nt, g.nvel)), rng.standard_normal((g.nt, 16, 16)))
    tr = solve_linear(None, th0, src, None, bar, stepper16)
    st = FlowState.zeros(g)
    st.theta = th0
    for n in range(3):
        st = step_linear(st, (src.f[n], src.f0[n]), (0.0, None), bar, n, stepper16)
    np.testing.assert_allclose(g.pack(st.u, st.v), tr.y[3], atol=1e-13)
    np.testing.assert_allclose(st.theta, tr.theta[3], atol=1e-13)
    assert st.t == pytest.approx(g.times[3])


# -- manufactured solution ------------------------------------------------------------

@pytest.fixture(scope="module")
def manufactured():
    """Smooth solenoidal (y, p, theta) and the sources that make it exact."""
    x, y, t = sp.symbols("x y t")
    stream = sp.exp(-t) * sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2
    U, V = sp.diff(stream, y), -sp.diff(stream, x)
    P = sp.exp(-t) * sp.cos(sp.pi * x) * sp.cos(sp.pi * y)
    TH = sp.exp(-t) * sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    TB = sp.exp(-sp.pi ** 2 * t) * sp.sin(sp.pi * y)

    def lap(f):
        return sp.diff(f, x, 2) + sp.diff(f, y, 2)

    exprs = {
        "U": U, "V": V, "TH": TH,
        "FU": sp.diff(U, t) - lap(U) + sp.diff(P, x),
        "FV": sp.diff(V, t) - lap(V) + sp.diff(P, y) - TH,
        "F0": sp.diff(TH, t) - lap(TH) + U * sp.diff(TB, x) + V * sp.diff(TB, y),
    }
    return {k: sp.lambdify((x, y, t), e, "numpy") for k, e in exprs.items()}


def _mms_run(fn, n, nt, T=0.25):
    g = GridSpec(n, n, nt, T=T)
    X, Y = g.cell_centers()
    Xu, Yu = g.u_faces()
    Xv, Yv = g.v_faces()
    bar = solve_trajectory(np.sin(np.pi * Y), g)
    z = np.zeros_like
    ts = g.times[1:]  # backward Euler evaluates the sources at the new level
    src = SourcePair.from_fields(
        g, np.stack([fn["FU"](Xu, Yu, tk) + z(Xu) for tk in ts]),
        np.stack([fn["FV"](Xv, Yv, tk) + z(Xv) for tk in ts]),
        np.stack([fn["F0"](X, Y, tk) + z(X) for tk in ts]))
    y0 = g.pack(fn["U"](Xu, Yu, 0.0), fn["V"](Xv, Yv, 0.0))
    tr = solve_linear(y0, fn["TH"](X, Y, 0.0), src, None, bar)
    yT = g.pack(fn["U"](Xu, Yu, T), fn["V"](Xv, Yv, T))
    return tr, yT, fn["TH"](X, Y, T)


def test_manufactured_second_order_in_space(manufactured):
    errs = []
    for n in (8, 16, 32):
        tr, yT, thT = _mms_run(manufactured, n, 1500)
        errs.append(max(np.abs(tr.y[-1] - yT).max(), np.abs(tr.theta[-1] - thT).max()))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5, errs


def test_manufactured_first_order_in_time(manufactured):
    ref, _, _ = _mms_run(manufactured, 12, 2048)
    errs = []
    for nt in (8, 16, 32):
        tr, _, _ = _mms_run(manufactured, 12, nt)
        errs.append(max(np.abs(tr.y[-1] - ref.y[-1]).max(),
                        np.abs(tr.theta[-1] - ref.theta[-1]).max()))
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8, errs


# -- controls --------------------------------------------------------------------------

def test_control_pair_support(setup16, rng):
    domain, g, _, _ = setup16
    mask, faces = control_masks(g, domain.omega, 2)
    ctrl = ControlPair(rng.standard_normal((g.nt, 16, 16)) * mask, mask,
                       rng.standard_normal((g.nt, g.nvel)) * faces, 2, faces)
    assert ctrl.vanishes_outside_omega()
    u, v = ctrl.vj_field(0, g)
    assert not u.any()
    bad = ControlPair(rng.standard_normal((g.nt, 16, 16)), mask)
    assert not bad.vanishes_outside_omega()
    assert np.all(bad.temperature_source()[:, mask == 0] == 0)


# -- nonlinear system --------------------------------------------------------------------

def test_nonlinear_zero_is_fixed(setup16):
    _, g, bar, _ = setup16
    tr = solve_nonlinear(None, np.zeros((16, 16)), None, bar)
    assert not tr.y.any() and not tr.theta.any()


def test_nonlinear_step_matches_solver(setup16, stepper16):
    _, g, bar, _ = setup16
    th0 = bump(g, 0.5)
    tr = solve_nonlinear(None, th0, None, bar, stepper16)
    st = FlowState.zeros(g)
    st.theta = th0
    for n in range(4):
        st = step_nonlinear(st, (0.0, None), bar, n, stepper16)
    np.testing.assert_allclose(st.theta, tr.theta[4], atol=1e-13)


def test_nonlinear_consistent_with_lagged_sources(setup16, stepper16):
    # a nonlinear run equals the linear run driven by its own lagged terms
    _, g, bar, _ = setup16
    th0 = bump(g, 0.3)
    tr = solve_nonlinear(None, th0, None, bar, stepper16)
    lin = solve_linear(None, th0, nonlinear_sources(tr), None, bar, stepper16)
    assert np.abs(lin.y - tr.y).max() < 1e-13
    assert np.abs(lin.theta - tr.theta).max() < 1e-13


def test_cfl_violation(setup16):
    _, g, bar, _ = setup16
    with pytest.raises(CflViolation):
        solve_nonlinear(np.full(g.nvel, 100.0), np.zeros((16, 16)), None, bar)


def test_upwind_transport_first_order():
    # passive blob in uniform flow, periodic-free interior: translated profile oracle
    errs = []
    for n in (32, 64, 128):
        g = GridSpec(n, 4, 8)
        X, _ = g.cell_centers()
        u = np.full((n + 1, 4), 1.0)
        u[0] = u[-1] = 0.0
        v = np.zeros((n, 5))
        theta = np.exp(-200 * (X - 0.3) ** 2)
        dt, steps = 0.25 / n, n  # advance to t = 0.25
        for _ in range(steps):
            theta = theta - dt * scalar_advection(u, v, theta, g)
        exact = np.exp(-200 * (X - 0.55) ** 2)
        errs.append(np.abs(theta - exact).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] >= 1.5


# -- Neumann heat ----------------------------------------------------------------------------

def test_neumann_constant_preserved():
    g = GridSpec(8, 8, 20)
    th = solve_heat_neumann(np.ones((8, 8)), g)
    assert np.abs(th - 1).max() < 1e-13


def test_neumann_mass_conserved(rng):
    g = GridSpec(16, 16, 1000)
    th = solve_heat_neumann(rng.standard_normal((16, 16)), g)
    m = th.reshape(1001, -1).sum(axis=1) * g.cell_volume
    assert np.abs(m - m[0]).max() <= 1e-10


def test_neumann_mass_conserved_with_advection(rng):
    g = GridSpec(16, 16, 400)
    xn = np.arange(17) / 16
    XN, YN = np.meshgrid(xn, xn, indexing="ij")
    s = 0.2 * np.sin(np.pi * XN) ** 2 * np.sin(2 * np.pi * YN)
    u, v = np.diff(s, axis=1) / g.hy, -np.diff(s, axis=0) / g.hx
    assert np.abs(divergence(u, v, g)).max() < 1e-12
    th = solve_heat_neumann(rng.standard_normal((16, 16)), g, (u, v))
    m = th.reshape(401, -1).sum(axis=1) * g.cell_volume
    assert np.abs(m - m[0]).max() <= 1e-10
