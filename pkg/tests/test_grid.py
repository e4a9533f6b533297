import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullctrl.errors import PoissonNoConverge
from nullctrl.grid import (GridSpec, box_mask, divergence, dump_field, gradient, laplacian,
                           load_field, operators, project)


def test_gridspec_derived_sizes():
    g = GridSpec(8, 4, 10, Lx=2.0, Ly=1.0, T=0.5)
    assert (g.hx, g.hy, g.dt) == (0.25, 0.25, 0.05)
    assert g.nvel == 7 * 4 + 8 * 3
    with pytest.raises(ValueError):
        GridSpec(0, 4, 4)


def test_pack_roundtrip(rng):
    g = GridSpec(5, 7, 8)
    vec = rng.standard_normal(g.nvel)
    assert np.array_equal(g.pack(*g.unpack(vec)), vec)


def test_divergence_of_linear_fields():
    g = GridSpec(12, 9, 8)
    Xu, _ = g.u_faces()
    _, Yv = g.v_faces()
    assert np.abs(divergence(np.full_like(Xu, 3.0), np.full_like(Yv, -1.0), g)).max() == 0.0
    assert np.abs(divergence(Xu, -Yv, g)).max() < 1e-13


def test_divergence_second_order():
    errs = []
    for n in (8, 16, 32):
        g = GridSpec(n, n, 8)
        Xu, _ = g.u_faces()
        X, _ = g.cell_centers()
        d = divergence(Xu ** 3, np.zeros((n, n + 1)), g)
        errs.append(np.abs(d - 3 * X ** 2).max())
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_laplacian_second_order():
    errs = []
    for n in (8, 16, 32, 64):
        g = GridSpec(n, n, 8)
        X, Y = g.cell_centers()
        f = np.sin(np.pi * X) * np.sin(np.pi * Y)
        errs.append(np.abs(laplacian(f, g) + 2 * np.pi ** 2 * f).max())
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert min(ratios) >= 3.5, ratios


def test_neumann_laplacian_of_constant():
    g = GridSpec(6, 5, 8)
    assert np.abs(laplacian(np.full((6, 5), 2.5), g, bc="neumann")).max() < 1e-12


def test_vector_laplacian_matches_sparse(rng):
    g = GridSpec(7, 6, 8)
    vec = rng.standard_normal(g.nvel)
    u, v = g.unpack(vec)
    lu, lv = laplacian(u, g, v=v)
    np.testing.assert_allclose(g.pack(lu, lv), operators(g).Lvel @ vec, atol=1e-10)


def test_gradient_of_constant_is_zero():
    g = GridSpec(6, 6, 8)
    gu, gv = gradient(np.full((6, 6), 4.0), g)
    assert np.abs(gu).max() == 0 and np.abs(gv).max() == 0


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(2, 9), ny=st.integers(2, 9), seed=st.integers(0, 2 ** 31))
def test_div_grad_duality(nx, ny, seed):
    g = GridSpec(nx, ny, 8, Lx=1.3, Ly=0.7)
    r = np.random.default_rng(seed)
    p = r.standard_normal((nx, ny))
    u, v = g.unpack(r.standard_normal(g.nvel))
    gu, gv = gradient(p, g)
    lhs = np.sum(gu * u) + np.sum(gv * v)
    rhs = -np.sum(p * divergence(u, v, g))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    ops = operators(g)
    assert abs(ops.D + ops.G.T).max() == 0


def test_project_removes_gradients():
    g = GridSpec(24, 24, 8)
    Xu, Yu = g.u_faces()
    Xv, Yv = g.v_faces()
    u = np.pi * np.cos(np.pi * Xu) * np.sin(np.pi * Yu)
    v = np.pi * np.sin(np.pi * Xv) * np.cos(np.pi * Yv)
    uo, vo, q = project(u, v, g)
    assert np.abs(divergence(uo, vo, g)).max() <= 1e-10
    # the discrete gradient of the sampled potential differs at O(h^2)
    assert max(np.abs(uo).max(), np.abs(vo).max()) < 0.05
    assert abs(q.mean()) < 1e-12


def test_project_solenoidal_unchanged_and_idempotent(rng):
    g = GridSpec(16, 12, 8)
    u, v = g.unpack(rng.standard_normal(g.nvel))
    u1, v1, _ = project(u, v, g)
    assert np.abs(divergence(u1, v1, g)).max() <= 1e-10
    u2, v2, q2 = project(u1, v1, g)
    assert max(np.abs(u2 - u1).max(), np.abs(v2 - v1).max()) <= 2e-10
    assert np.abs(q2).max() < 1e-9


def test_project_zero():
    g = GridSpec(8, 8, 8)
    u, v, q = project(np.zeros((9, 8)), np.zeros((8, 9)), g)
    assert not u.any() and not v.any() and not q.any()


def test_project_iteration_cap(rng):
    g = GridSpec(16, 16, 8)
    u, v = g.unpack(rng.standard_normal(g.nvel))
    with pytest.raises(PoissonNoConverge):
        project(u, v, g, maxiter=2)


def test_leray_matches_cg_projection(rng):
    g = GridSpec(10, 10, 8)
    vec = rng.standard_normal(g.nvel)
    direct, _ = operators(g).leray()(vec)
    u, v, _ = project(*g.unpack(vec), g)
    np.testing.assert_allclose(direct, g.pack(u, v), atol=1e-9)


def test_box_mask_sharp():
    g = GridSpec(10, 10, 8)
    m = box_mask(g, ((0.3, 0.7), (0.3, 0.7)))
    assert set(np.unique(m)) == {0.0, 1.0}
    assert m.sum() == 16


def test_stokes_solver_symmetric_and_solenoidal(rng):
    g = GridSpec(8, 8, 16)
    ops = operators(g)
    S = ops.stokes_solver(g.dt)
    a, b = rng.standard_normal(g.nvel), rng.standard_normal(g.nvel)
    ya, _ = S(a)
    yb, _ = S(b)
    assert abs(ya @ b - a @ yb) < 1e-12 * np.linalg.norm(ya) * np.linalg.norm(b)
    assert np.abs(ops.D @ ya).max() < 1e-10


def test_dump_roundtrip(tmp_path, rng):
    g = GridSpec(4, 3, 8)
    f = rng.standard_normal((4, 3))
    path = tmp_path / "theta.csv"
    dump_field(path, f, g, "cell")
    back, meta = load_field(path)
    assert np.array_equal(back, f)
    assert meta["kind"] == "cell" and int(meta["nx"]) == 4
