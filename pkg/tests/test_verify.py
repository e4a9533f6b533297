import csv
import math

import numpy as np
import pytest

from nullctrl.adjoint import solve_adjoint
from nullctrl.grid import GridSpec, box_mask
from nullctrl.verify import (SAMPLE_COLUMNS, carleman_ratio, carleman_terms, evaluate_sample,
                             format_log10, neumann_obstruction, sample_data)

OMEGA = ((0.3, 0.7), (0.3, 0.7))


def test_format_log10():
    assert format_log10(-np.inf) == "0"
    assert format_log10(np.inf) == "inf"
    assert format_log10(0.0) == "1.000000000000e+0"
    assert format_log10(-3.0) == "1.000000000000e-3"
    assert float(format_log10(2.5)) == pytest.approx(10 ** 2.5, rel=1e-12)
    assert format_log10(67030.5).endswith("e+67030")
    assert format_log10(math.log10(9.9999999999999)) == "1.000000000000e+1"


def test_sample_data_solenoidal_and_seeded(setup16, stepper16):
    g = setup16[1]
    a, b = sample_data(7, g), sample_data(7, g)
    assert np.array_equal(a.phiT, b.phiT) and np.array_equal(a.g.f0, b.g.f0)
    assert np.abs(stepper16.ops.D @ a.phiT).max() < 1e-12
    c = sample_data(8, g)
    assert not np.array_equal(a.psiT, c.psiT)


def test_sample_data_grid_independent():
    # coefficients depend on the seed only; a 3x refinement shares cell centres
    coarse, fine = GridSpec(16, 16, 16), GridSpec(48, 48, 48)
    a, b = sample_data(3, coarse), sample_data(3, fine)
    np.testing.assert_allclose(b.psiT[1::3, 1::3], a.psiT, rtol=0, atol=1e-13)
    np.testing.assert_allclose(b.g.f0[::3, 1::3, 1::3], a.g.f0, rtol=0, atol=1e-12)


def test_zero_sample_ratio_zero(setup16, stepper16):
    _, g, bar, w = setup16
    smp = evaluate_sample(0, w, bar, OMEGA, zero=True, stepper=stepper16)
    assert smp.log_lhs == -np.inf and smp.ratio == 0.0
    assert format_log10(smp.log10_ratio) == "0"


def test_terms_match_direct_sum(setup16, stepper16):
    _, g, bar, w = setup16
    d = sample_data(2, g)
    adj = solve_adjoint(d.phiT, d.psiT, d.g, bar, stepper16)
    t = carleman_terms(adj, d.g, w, OMEGA)
    # psi term: sum_n c_n dt e^{-5 s beta*_n} gamma*_n^5 ||psi_n||^2, trapezoid in time
    sq = g.cell_volume * np.sum(adj.psi.reshape(g.nt + 1, -1) ** 2, axis=1)
    with np.errstate(invalid="ignore"):
        logw = -5 * w.s * w.beta_star + 5 * np.log(w.gamma_star)
    c = np.full(g.nt + 1, g.dt)
    c[[0, -1]] *= 0.5
    finite = np.isfinite(logw)
    m = logw[finite].max()
    direct = m + math.log(np.sum(c[finite] * np.exp(logw[finite] - m) * sq[finite]))
    assert t["psi"] == pytest.approx(direct, rel=1e-12)
    # observation restricted to omega
    mask = box_mask(g, OMEGA).ravel() > 0
    obs = g.cell_volume * np.sum(adj.psi.reshape(g.nt + 1, -1)[:, mask] ** 2, axis=1)
    assert np.all(obs <= sq)
    assert t["initial"] == pytest.approx(
        math.log(g.cell_volume * (adj.phi[0] @ adj.phi[0] + np.sum(adj.psi[0] ** 2))), rel=1e-12)


def test_beta_family_dominates_alpha_family(setup16, stepper16):
    _, g, bar, w = setup16
    d = sample_data(4, g)
    adj = solve_adjoint(d.phiT, d.psiT, d.g, bar, stepper16)
    tb = carleman_terms(adj, d.g, w, OMEGA)
    ta = carleman_terms(adj, d.g, w, OMEGA, use_alpha_family=True)
    ls = math.log(w.s)
    # frozen weights are larger near t = 0 and identical on (T/2, T]
    assert tb["phi"] >= ta["phi"] - 4 * ls
    assert tb["psi"] >= ta["psi"] - 5 * ls
    assert "initial" not in ta


def test_ratio_report_finite_and_deterministic(setup16, stepper16, tmp_path):
    _, g, bar, w = setup16
    r1 = carleman_ratio(5, w, bar, OMEGA, stepper=stepper16)
    r2 = carleman_ratio(5, w, bar, OMEGA, stepper=stepper16)
    assert r1.all_finite
    assert np.array_equal(r1.log10_ratios, r2.log10_ratios)
    assert [s.seed for s in r1.samples] == [0, 1, 2, 3, 4]
    path = tmp_path / "c.csv"
    r1.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == SAMPLE_COLUMNS and len(rows) == 6
    assert float(rows[1][-1]) == r1.samples[0].log10_ratio
    with pytest.raises(ValueError):
        carleman_ratio(0, w, bar)


def test_neumann_mass_obstruction():
    g = GridSpec(16, 16, 200, T=1.0)
    X, Y = g.cell_centers()
    th0 = 0.7 + 0.3 * np.cos(np.pi * X) * np.cos(2 * np.pi * Y)
    rep = neumann_obstruction(th0, g)
    assert rep.mass0 == pytest.approx(0.7, rel=1e-12)
    assert rep.drift <= 1e-10
    assert rep.obstructed and rep.l1_T >= 0.7 - 1e-10


def test_neumann_mean_zero_not_obstructed():
    g = GridSpec(16, 16, 100)
    X, Y = g.cell_centers()
    rep = neumann_obstruction(np.cos(np.pi * X), g)
    assert not rep.obstructed and rep.drift <= 1e-10
