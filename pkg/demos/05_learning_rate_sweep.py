"""A damped forward-backward sweep for the learning-rate problem.

Run with ``python3 demos/05_learning_rate_sweep.py`` (a few seconds).
"""

# %% The stationary rule converges, slowly
# The control is moved halfway towards the root of dH/du after each
# forward state solve and backward adjoint solve.
import numpy as np

from sheetcontrol.control import MLSpec, ml_forward_backward_sweep

for n in (8, 16):
    res = ml_forward_backward_sweep(MLSpec(max_sweeps=5000), n_t=n)
    print(f"{n}x{n}: {res.sweeps} sweeps, control residual {res.residuals['control']:.2e}")

# %% Where the iteration is slow
# The last updates concentrate near (t, x) = (0, X), where a change in u
# moves the fewest downstream cells and the local gain is close to one.
res = ml_forward_backward_sweep(MLSpec(max_sweeps=30), n_t=16, raise_on_failure=False)
nxt = ml_forward_backward_sweep(MLSpec(max_sweeps=31), n_t=16, raise_on_failure=False)
i, j = np.unravel_index(np.argmax(np.abs(nxt.u.values - res.u.values)), res.u.values.shape)
print(f"largest update after 30 sweeps at t = {res.u.grid.t[i]:.3f}, x = {res.u.grid.x[j]:.3f}")

# %% Taking the opposite sign diverges
try:
    with np.errstate(all="ignore"):
        ml_forward_backward_sweep(MLSpec(rule="printed"), n_t=8)
except ArithmeticError as exc:
    print("opposite-sign rule:", exc)
