"""Brownian-sheet SPDE simulation and optimal control in the plane.

Modules
-------
grid        grids, node fields, seeded Brownian-sheet sampling
calculus    rectangle integrals, first- and second-type stochastic integrals, star
special     Bessel-type series, Hermite functions, positivity probe
forward     Euler solver for controlled sheet SPDEs and Monte Carlo estimators
adjoint     Hamiltonian, L fixed point, deterministic plane adjoints
control     worked control problems and perturbation checks
acceptance  numbered acceptance checks
cli         command-line front end
"""

__version__ = "0.1.0"
