"""
Carleman weights
================

Build the weight bundle on the reference grid, look at how the time profile
freezes the beta family on the first half of the horizon, and run the
node-wise inequality checks.
"""
# %%
import numpy as np

from nullctrl import DomainSpec, GridSpec, build_eta, build_time_profile, build_weights
from nullctrl.hum import control_log_weights
from nullctrl.weights import check_weight_inequalities

domain = DomainSpec()
grid = GridSpec(32, 32, 64)
eta = build_eta(domain, grid)
prof = build_time_profile(grid.T, grid.nt)
w = build_weights(eta, prof, s=2.0, lam=1.5)
print(f"sup eta = {eta.sup:.3f}, min |grad eta| off omega0 = {eta.grad_min_off_omega0:.3f}")

# %%
# The alpha family blows up at both ends; the beta family is constant up to T/2.
for n in (0, 16, 32, 48, 63):
    print(f"t={w.t[n]:.4f}  alpha*={w.alpha_star[n]:.6g}  beta*={w.beta_star[n]:.6g}")

# %%
# Control weights live in log space: exp() of these underflows everywhere.
lw0, lwj = control_log_weights(w)
print("log w0 at t=0:", lw0[0], " at t=T-dt:", lw0[-2])

# %%
rep = check_weight_inequalities(w)
for c in rep.checks:
    print(f"{c.name:32s} {'ok' if c.passed else 'FAILED'}  worst={c.worst:.2e}")
