"""
Why zero-flux walls block null control
======================================

With insulated walls the mean temperature is conserved, even under a
divergence-free stirring flow, so a state with nonzero mass can never reach
zero.
"""
# %%
import numpy as np

from nullctrl import GridSpec
from nullctrl.verify import neumann_obstruction

grid = GridSpec(32, 32, 1000)
X, Y = grid.cell_centers()
theta0 = 0.7 + np.cos(np.pi * X) * np.cos(np.pi * Y)

xn = np.arange(grid.nx + 1) * grid.hx
XN, YN = np.meshgrid(xn, xn, indexing="ij")
stream = 0.05 * np.sin(np.pi * XN) * np.sin(np.pi * YN)
flow = (np.diff(stream, axis=1) / grid.hy, -np.diff(stream, axis=0) / grid.hx)

# %%
rep = neumann_obstruction(theta0, grid, flow)
print(f"mass at t=0 {rep.mass0:.15f}, at t=T {rep.massT:.15f}, drift {rep.drift:.1e}")
print(rep.message)
