"""
Linear null control by penalized HUM
=====================================

Drive a small temperature bump to rest with a control acting on the
temperature equation alone, and watch the terminal state shrink as the
penalty is reduced.
"""
# %%
import numpy as np

from nullctrl import DomainSpec, DualConfig, GridSpec, hum_solve
from nullctrl.forward import solve_trajectory
from nullctrl.hum import ControlProblem
from nullctrl.weights import build_eta, build_time_profile, build_weights

domain = DomainSpec()
grid = GridSpec(32, 32, 64)
X, Y = grid.cell_centers()
bar = solve_trajectory(np.sin(np.pi * Y), grid)
w = build_weights(build_eta(domain, grid), build_time_profile(grid.T, grid.nt), 2.0, 1.5)
problem = ControlProblem(bar, w, domain.omega, DualConfig())
theta0 = 1e-2 * np.sin(np.pi * X) * np.sin(np.pi * Y)

# %%
for eps in (1e-2, 1e-3, 1e-4, 1e-5):
    res = hum_solve(None, theta0, None, bar, w, DualConfig(), problem=problem, eps=eps)
    print(f"eps={eps:.0e}  |x(T)|={res.terminal_norm:.3e}  CG iters={res.cg_iters}  "
          f"KKT/scale={res.kkt_residual / res.scale:.1e}  "
          f"in omega={res.controls.vanishes_outside_omega()}  v_j={res.controls.vj}")

# %%
# Components of the weighted norm (log10); finite values mean the state sits in the space.
for k, v in res.e_norm_report.items():
    print(f"{k:20s} {v:.6g}")
