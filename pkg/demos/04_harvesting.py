"""Optimal harvesting with the star term in the adjoint.

Run with ``python3 demos/04_harvesting.py``.
"""

# %% Solve the deterministic adjoint and read off the control
# With constant coefficients and a linear terminal reward the adjoint is
# deterministic: q = 0 and p, L solve a coupled integral equation.
import numpy as np

from sheetcontrol.adjoint import Hamiltonian, adjoint_residuals
from sheetcontrol.control import HarvestSpec, harvest_problem, harvest_solve
from sheetcontrol.forward import estimate_J

spec = HarvestSpec(alpha0=0.1, beta0=0.5, theta=1.0)
u, adj = harvest_solve(spec, n_t=16)
print("Picard iterations:", adj.picard_iterations)
print("residuals:", adjoint_residuals(adj, spec.theta, -spec.alpha0, -spec.alpha0))
print(f"u* ranges over [{u.values.min():.4f}, {u.values.max():.4f}]")

# %% The control maximises the Hamiltonian pointwise
dH = Hamiltonian(harvest_problem(spec), u.grid).dH_du(1.0, u.values, adj.p, adj.q, adj.L)
print("max |dH/du| at u*:", float(np.max(np.abs(dH))))

# %% Without growth the adjoint is the terminal weight and u* = 2 / theta
u0, _ = harvest_solve(HarvestSpec(alpha0=0.0, beta0=0.5, theta=2.0), n_t=8)
print("alpha0 = 0:", np.unique(u0.values))

# %% Expected reward under u* against a constant rate
prob = harvest_problem(spec)
for label, control in (("u*", u), ("u = 1", 1.0), ("u = 3", 3.0)):
    mean, se = estimate_J(prob, control, 4000, 3, grid=u.grid)
    print(f"J({label}) = {mean:.4f} +- {se:.4f}")
