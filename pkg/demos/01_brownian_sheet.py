"""Sampling the Brownian sheet and integrating against it.

Run with ``python3 demos/01_brownian_sheet.py``.  Everything here is
seeded, so the printed numbers are identical on every run.
"""

# %% A sheet on the unit square
# Each path is built from independent cell increments of variance dt*dx,
# cumulated in both directions.  Path k of seed s is reproducible on its own.
import numpy as np

from sheetcontrol.calculus import Rect, ito_integral_first, lebesgue_integral_2d, star
from sheetcontrol.grid import Field2D, GridSpec, empirical_covariance, sample_ensemble, sample_sheet

grid = GridSpec(T=1.0, X=1.0, n_t=16, n_x=16)
path = sample_sheet(grid, seed=1, path_index=0)
print("B(1, 1) on path 0:", path.B(1.0, 1.0))
print("same path re-sampled:", sample_sheet(grid, seed=1, path_index=0).B(1.0, 1.0))

# %% Covariance min(t1, t2) * min(x1, x2)
paths = sample_ensemble(grid, seed=2, n_paths=20_000)
for z1, z2 in [((0.25, 0.5), (0.5, 0.25)), ((1.0, 1.0), (1.0, 1.0))]:
    cov, se = empirical_covariance(paths, z1, z2)
    exact = min(z1[0], z2[0]) * min(z1[1], z2[1])
    print(f"cov{z1}{z2} = {cov:.4f} +- {se:.4f}  (exact {exact})")

# %% Ito isometry for the integrand phi(t, x) = t * x
# The sampled integral uses the left-point rule, so its second moment matches
# the same rule applied to phi^2 on the grid.
phi = Field2D.from_function(grid, lambda t, x: t * x)
full = Rect.full(grid)
I = ito_integral_first(phi, paths, full)
print("E[I^2] =", float(np.mean(I ** 2)), " grid integral of phi^2 =",
      lebesgue_integral_2d(Field2D(grid, phi.values ** 2), full))

# %% The star operator
# (h * k)(t, x) integrates over [t, T] x [0, x].  For constants it is
# 2 c^2 x (T - t).
c = Field2D.constant(grid, 0.5)
print("(c * c)(0, 1) =", star(c, c).values[0, -1], " closed form:", 2 * 0.25 * 1.0 * 1.0)
