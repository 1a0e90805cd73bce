"""The linear-quadratic problem with feedback u = lambda(t, x) Y.

Run with ``python3 demos/03_lq_feedback.py`` (about ten seconds).
"""

# %% Closed-form feedback gain
# lambda solves lambda_tx + lambda^2 = 0 and separates into two scalar
# Riccati solutions.
from sheetcontrol.control import (
    LQSpec,
    lq_condition_value,
    lq_find_X,
    lq_lambda_closed_form,
    lq_problem,
    lq_feedback,
    lq_riccati_residual,
    lq_solve_and_verify,
    perturbation_dominance,
)
from sheetcontrol.grid import Field2D, GridSpec

T, theta = 0.5, 1.0
X = lq_find_X(T, theta)
spec = LQSpec(T, X, theta)
print(f"X solving the boundary condition: {X:.12f}  (condition = {lq_condition_value(T, X, theta):.15f})")
print("Riccati residual at the centre:", lq_riccati_residual(spec, T / 2, X / 2))

# %% The boundary identity lambda(0, 0) = theta E[Y(T, X)] / Y(0, 0)
rep = lq_solve_and_verify(spec, n_paths=5000, seed=1, n_det=256, n_mc=32)
print(f"lambda(0,0) = {rep.lambda00:.6f}")
print(f"deterministic mean equation: {rep.deterministic_ratio:.6f}")
print(f"Monte Carlo: {rep.mc_ratio:.4f} +- {rep.mc_ratio_se:.4f}")

# %% Is u = lambda Y locally optimal?
# Perturb the feedback by eps * v on common random numbers and compare.
grid = GridSpec(T, X, 32, 32)
dirs = {"const": Field2D.constant(grid, 1.0),
        "lambda": Field2D.from_function(grid, lambda t, x: lq_lambda_closed_form(spec, t, x))}
tab = perturbation_dominance(lq_problem(spec), lq_feedback(spec), dirs, [-0.1, 0.1], 5000, 2, grid)
for r in tab.rows:
    print(f"J(u + {r.eps:+.1f} {r.direction}) - J(u) = {r.diff:+.4f} +- {r.diff_se:.4f}")
print("The negative steps improve J: the feedback is not a local maximiser of this reward.")
print(f"J(lambda Y) = {rep.J_feedback[0]:.4f}   J(-lambda Y) = {rep.J_negated[0]:.4f}")
