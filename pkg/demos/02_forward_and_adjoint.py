"""
Forward and adjoint solvers
===========================

Compute the heat-only target trajectory, compare it with the closed form,
then confirm that the discrete adjoint is the exact transpose of the
forward map through the duality identity.
"""
# %%
import numpy as np

from nullctrl import GridSpec
from nullctrl.adjoint import duality_gap
from nullctrl.forward import ControlPair, SourcePair, control_masks, solve_trajectory

grid = GridSpec(16, 16, 32)
_, Y = grid.cell_centers()
bar = solve_trajectory(np.sin(np.pi * Y), grid)
exact = np.exp(-np.pi ** 2 * grid.T) * np.sin(np.pi * Y)
print("max error at T:", np.abs(bar.theta_bar[-1] - exact).max())

# %%
# Random data everywhere: states, sources, control, adjoint terminal values.
rng = np.random.default_rng(1)
mask, _ = control_masks(grid, ((0.3, 0.7), (0.3, 0.7)))
src = SourcePair(rng.standard_normal((grid.nt, grid.nvel)),
                 rng.standard_normal((grid.nt, 16, 16)))
ctrl = ControlPair(rng.standard_normal((grid.nt, 16, 16)), mask)
gap = duality_gap(rng.standard_normal(grid.nvel), rng.standard_normal((16, 16)), src, ctrl,
                  rng.standard_normal(grid.nvel), rng.standard_normal((16, 16)), None, bar,
                  relative=True)
print(f"relative duality gap: {gap:.2e}")
