"""Bessel-type series and the loss of positivity they reveal.

Run with ``python3 demos/02_series_and_positivity.py``.
"""

# %% The series f and f0
# f(y) = sum y^n / (n!)^2 is the mean of the multiplicative sheet equation
# Y = 1 + int c Y dz evaluated at y = c t x.  f0 is the same series at -t.
from scipy.special import iv, jn_zeros

from sheetcontrol.forward import ControlProblem, negativity_experiment, solve_forward
from sheetcontrol.grid import GridSpec
from sheetcontrol.special import find_r0, positivity_probe, series_f

for y in (0.5, 2.0, 10.0):
    print(f"f({y}) = {series_f(y).value:.12f}   I0(2 sqrt y) = {iv(0, 2 * y ** 0.5):.12f}")

r0 = find_r0()
print(f"first zero of f0: {r0:.10f}  (Bessel zero check: {(jn_zeros(0, 1)[0] / 2) ** 2:.10f})")

# %% The grid solver converges to the series
c = 0.5
for n in (16, 64, 256):
    g = GridSpec(1.0, 1.0, n, n)
    prob = ControlProblem(alpha=lambda t, x, y, u: c * y, beta=lambda t, x, y, u: 0 * y, T=1, X=1, y0=1)
    Y = solve_forward(prob, 0.0, g).Y.values[-1, -1]
    print(f"n = {n:3d}: Y(1, 1) = {Y:.6f}   f({c}) = {series_f(c).value:.6f}")

# %% Positivity fails
# The scalar probe b(u1) is a slice of the Hermite transform of the solution
# of the noisy equation.  A negative value rules out a positive solution.
probe = positivity_probe(eta=3.0)
print(f"min b = {probe.min_value:.4f} at u1 = {probe.argmin:.3f}")

# %% Direct simulation agrees: many paths of Y = 1 + int Y dB dip below zero
est = negativity_experiment(0.0, 1.0, 1.0, GridSpec(1, 1, 64, 64), n_paths=5000, seed=9)
print(f"P(min Y < 0) = {est.probability:.3f} +- {est.stderr:.3f}")
