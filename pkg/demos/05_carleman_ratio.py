"""
Probing the Carleman inequality
===============================

Evaluate both sides of the weighted observability inequality on random
adjoint solutions. The numbers are astronomically large, so everything is
reported in log10.
"""
# %%
import numpy as np

from nullctrl import DomainSpec, GridSpec
from nullctrl.forward import solve_trajectory
from nullctrl.verify import carleman_ratio, format_log10
from nullctrl.weights import build_eta, build_time_profile, build_weights

domain = DomainSpec()
for n in (16, 32):
    grid = GridSpec(n, n, 2 * n)
    _, Y = grid.cell_centers()
    bar = solve_trajectory(np.sin(np.pi * Y), grid)
    w = build_weights(build_eta(domain, grid), build_time_profile(grid.T, grid.nt), 2.0, 1.5)
    rep = carleman_ratio(20, w, bar, domain.omega)
    print(f"{n}x{n}: max ratio {format_log10(rep.max_log10_ratio)}, "
          f"median {format_log10(rep.median_log10_ratio)}")

# %%
# The largest sample, term by term (natural logs).
worst = max(rep.samples, key=lambda s: s.log_ratio)
for k, v in worst.terms.items():
    print(f"{k:12s} {v / np.log(10):.6f}")
