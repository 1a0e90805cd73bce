"""The three worked control problems and maximum-principle property checks.

* Linear-quadratic (LQ): ``dY = u dz + beta dB``, reward
  ``-1/2 E[int u^2 + theta Y(T, X)^2]``, feedback ``u = lambda Y`` with the
  closed-form solution of ``lambda_tx + lambda^2 = 0``.
* Harvesting: ``dY = (alpha0 Y - u) dz + beta0 Y dB``, reward
  ``E[int ln u^2 + theta Y(T, X)]``, ``u* = 2 / (p + (L * 1))``.
* Learning rate: ``dY = -u Y dz + beta0 dB``, reward
  ``-E[int u^2 + theta Y(T, X)^2]``, solved by a damped forward-backward sweep.

``perturbation_dominance`` compares a candidate control against ``u + eps v``
on common random numbers and estimates ``dJ/deps`` at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .adjoint import (
    AdjointSolution,
    ConvergenceError,
    Hamiltonian,
    _star,
    adjoint_residuals,
    solve_adjoint_deterministic,
    solve_adjoint_linear,
)
from .calculus import star_region_sums
from .forward import (
    ControlProblem,
    mean_and_se,
    path_rewards,
    path_statistics,
    solve_forward,
    solve_mean_volterra,
)
from .grid import Field2D, GridSpec, SheetPath
from .special import series_f

__all__ = [
    "LQSpec",
    "HarvestSpec",
    "MLSpec",
    "SingularControlError",
    "lq_lambda_closed_form",
    "lq_lambda_separable",
    "lq_riccati_residual",
    "lq_condition_value",
    "lq_find_X",
    "lq_problem",
    "lq_feedback",
    "lq_solve_and_verify",
    "LQReport",
    "harvest_problem",
    "harvest_solve",
    "star_one_expansion",
    "ml_problem",
    "ml_forward_backward_sweep",
    "MLResult",
    "perturbation_dominance",
    "DominanceTable",
]


class SingularControlError(ArithmeticError):
    """``p + (L * 1)`` vanished, so the harvesting rate is undefined."""

    def __init__(self, node: tuple[int, int]):
        self.node = node
        super().__init__(f"p + (L * 1) vanishes at node ({node[0]}, {node[1]})")


# ----------------------------------------------------------------------------
# LQ


@dataclass(frozen=True)
class LQSpec:
    T: float
    X: float
    theta: float
    beta: float = 1.0
    y0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.T < 1.0:
            raise ValueError("LQ closed form needs 0 < T < 1")
        if not self.X > 0.0:
            raise ValueError("X must be positive")
        if not self.theta > 0.0:
            raise ValueError("theta must be positive")


def _lq_domain(spec: LQSpec, t, x) -> None:
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    eps = 1e-12
    if np.any(t < -eps) or np.any(t > spec.T + eps) or np.any(x < -eps) or np.any(x > spec.X + eps):
        raise ValueError("(t, x) outside [0, T] x [0, X]")


def lq_lambda_closed_form(spec: LQSpec, t, x):
    """``lambda(t, x) = 1 / ((1 - T + t) (1/theta + X - x))``."""
    _lq_domain(spec, t, x)
    return 1.0 / ((1.0 - spec.T + np.asarray(t, dtype=float))
                  * (1.0 / spec.theta + spec.X - np.asarray(x, dtype=float)))


def lq_lambda_separable(spec: LQSpec, t, x):
    """Product ``phi1(T - t) phi2(X - x)`` of the two scalar Riccati solutions
    ``phi1' = phi1^2, phi1(0) = 1`` and ``phi2' = -phi2^2, phi2(0) = theta``."""
    _lq_domain(spec, t, x)
    phi1 = lambda s: 1.0 / (1.0 - s)
    phi2 = lambda s: 1.0 / (1.0 / spec.theta + s)
    return phi1(spec.T - np.asarray(t, dtype=float)) * phi2(spec.X - np.asarray(x, dtype=float))


def lq_riccati_residual(spec: LQSpec, t: float, x: float, h: float = 1e-4,
                        separable: bool = False) -> float:
    """Central mixed difference of ``lambda`` plus ``lambda^2`` at ``(t, x)``."""
    if min(t, spec.T - t, x, spec.X - x) < 2 * h:
        raise ValueError("probe point closer than 2h to the boundary")
    lam = lq_lambda_separable if separable else lq_lambda_closed_form
    mixed = (lam(spec, t + h, x + h) - lam(spec, t + h, x - h)
             - lam(spec, t - h, x + h) + lam(spec, t - h, x - h)) / (4.0 * h * h)
    return float(mixed + lam(spec, t, x) ** 2)


def lq_condition_value(T: float, X: float, theta: float) -> float:
    """``(1 - T)(1 + X theta) f(-log(1 - T) log(1 + X theta))``.

    Equals 1 exactly when ``lambda(0, 0) = theta E[Y(T, X)] / Y(0, 0)``.
    """
    if not 0.0 < T < 1.0:
        raise ValueError("need 0 < T < 1")
    if X < 0.0 or theta <= 0.0:
        raise ValueError("need X >= 0 and theta > 0")
    arg = -math.log1p(-T) * math.log1p(X * theta)
    return (1.0 - T) * (1.0 + X * theta) * series_f(arg).value


def lq_find_X(T: float, theta: float, tol: float = 1e-12) -> float:
    """Horizon ``X`` at which the LQ boundary condition holds.

    The condition starts at ``1 - T < 1`` for ``X = 0`` and grows without
    bound, so the bracket is doubled until it changes sign, then refined.

    Raises
    ------
    ValueError
        No sign change below ``X = 1e6`` or the root misses ``tol``.
    """
    g = lambda X: lq_condition_value(T, X, theta) - 1.0
    lo, hi = 0.0, 1.0
    while g(hi) <= 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ValueError("no bracket for the LQ condition below X = 1e6")
    root = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(root)) > tol:
        raise ValueError(f"LQ condition residual {abs(g(root)):.3e} exceeds tol {tol}")
    return float(root)


def lq_problem(spec: LQSpec) -> ControlProblem:
    beta = float(spec.beta)
    theta = float(spec.theta)
    return ControlProblem(
        alpha=lambda t, x, y, u: u + 0.0 * y,
        beta=lambda t, x, y, u: beta + 0.0 * y,
        cost=lambda t, x, y, u: -0.5 * u * u,
        terminal=lambda y: -0.5 * theta * y * y,
        T=spec.T, X=spec.X, y0=spec.y0,
        dalpha_dy=lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape),
        dalpha_du=lambda t, x, y, u: np.ones(np.broadcast(t, x, y, u).shape),
        dbeta_dy=lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape),
        dbeta_du=lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape),
        dcost_dy=lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape),
        dcost_du=lambda t, x, y, u: -u + 0.0 * y,
        dterminal=lambda y: -theta * y,
        name="lq",
    )


def lq_feedback(spec: LQSpec, sign: float = 1.0) -> Callable:
    """Feedback rule ``u(t, x, y) = sign * lambda(t, x) * y``."""
    return lambda t, x, y: sign * lq_lambda_closed_form(spec, t, x) * y


@dataclass(frozen=True)
class LQReport:
    X: float
    lambda00: float
    condition: float
    lambda_integral: float
    series_mean: float
    volterra_mean: float
    deterministic_ratio: float
    deterministic_rel_err: float
    mc_ratio: float
    mc_ratio_se: float
    mc_z: float
    J_feedback: tuple[float, float]
    J_negated: tuple[float, float]
    n_paths: int
    grid_det: GridSpec
    grid_mc: GridSpec


def lq_solve_and_verify(spec: LQSpec, n_paths: int, seed, n_det: int = 256, n_mc: int = 64) -> LQReport:
    """Check ``lambda(0, 0) = theta E[Y(T, X)] / Y(0, 0)`` for ``u = lambda Y``.

    The deterministic side solves the mean equation
    ``m = Y(0,0) + int lambda m`` on an ``n_det`` grid; the Monte Carlo side
    simulates the noisy state under the feedback on an ``n_mc`` grid.  Both
    ``J(lambda Y)`` and ``J(-lambda Y)`` are estimated on the same paths.
    """
    if spec.y0 == 0.0:
        raise ValueError("boundary identity needs Y(0, 0) != 0")
    lam00 = float(lq_lambda_closed_form(spec, 0.0, 0.0))
    integral = -math.log1p(-spec.T) * math.log1p(spec.X * spec.theta)
    series_mean = spec.y0 * series_f(integral).value

    gd = GridSpec(spec.T, spec.X, n_det, n_det)
    lam = Field2D.from_function(gd, lambda t, x: lq_lambda_closed_form(spec, t, x))
    m = solve_mean_volterra(lam, spec.y0).values[-1, -1]
    det_ratio = spec.theta * m / spec.y0

    gm = GridSpec(spec.T, spec.X, n_mc, n_mc)
    problem = lq_problem(spec)
    stats = path_statistics(problem, lq_feedback(spec), n_paths, seed, gm)
    ratio, ratio_se = mean_and_se(spec.theta * stats["terminal"] / spec.y0)
    J_plus = mean_and_se(stats["reward"])
    J_minus = mean_and_se(path_statistics(problem, lq_feedback(spec, -1.0), n_paths, seed, gm)["reward"])
    z = (ratio - lam00) / ratio_se if ratio_se > 0 else math.inf * np.sign(ratio - lam00)
    return LQReport(
        X=spec.X, lambda00=lam00, condition=lq_condition_value(spec.T, spec.X, spec.theta),
        lambda_integral=integral, series_mean=series_mean, volterra_mean=float(m),
        deterministic_ratio=float(det_ratio), deterministic_rel_err=abs(det_ratio - lam00) / lam00,
        mc_ratio=ratio, mc_ratio_se=ratio_se, mc_z=float(z),
        J_feedback=J_plus, J_negated=J_minus, n_paths=n_paths, grid_det=gd, grid_mc=gm,
    )


# ----------------------------------------------------------------------------
# Harvesting


@dataclass(frozen=True)
class HarvestSpec:
    alpha0: float
    beta0: float
    theta: float
    T: float = 1.0
    X: float = 1.0
    y0: float = 1.0

    def __post_init__(self):
        if not self.y0 > 0.0:
            raise ValueError("harvesting needs Y(0, 0) > 0")
        if not (self.T > 0.0 and self.X > 0.0):
            raise ValueError("T and X must be positive")


def _log_u2_derivative(t, x, y, u):
    u = np.asarray(u, dtype=float)
    if np.any(u == 0.0):
        raise ZeroDivisionError("d/du ln(u^2) is singular at u = 0")
    return 2.0 / u + 0.0 * y


def harvest_problem(spec: HarvestSpec) -> ControlProblem:
    a0, b0, theta = float(spec.alpha0), float(spec.beta0), float(spec.theta)
    zeros = lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape)
    return ControlProblem(
        alpha=lambda t, x, y, u: a0 * y - u,
        beta=lambda t, x, y, u: b0 * y + 0.0 * u,
        cost=lambda t, x, y, u: np.log(u * u) + 0.0 * y,
        terminal=lambda y: theta * y,
        T=spec.T, X=spec.X, y0=spec.y0,
        u_bounds=(0.0, np.inf),
        dalpha_dy=lambda t, x, y, u: a0 + zeros(t, x, y, u),
        dalpha_du=lambda t, x, y, u: -1.0 + zeros(t, x, y, u),
        dbeta_dy=lambda t, x, y, u: b0 + zeros(t, x, y, u),
        dbeta_du=zeros,
        dcost_dy=zeros,
        dcost_du=_log_u2_derivative,
        dterminal=lambda y: theta + 0.0 * y,
        name="harvest",
    )


def star_one_expansion(L: Field2D, horizon: float | None = None) -> np.ndarray:
    """``(L * 1)(t, x) = x (H - t) L(t, x) + int_0^x int_t^H L``."""
    grid = L.grid
    H = grid.T if horizon is None else horizon
    i_h = grid.t_index(H)
    tt, xx = grid.mesh()
    span = np.where(np.arange(grid.n_t + 1)[:, None] < i_h, xx * (H - tt), 0.0)
    return span * L.values + star_region_sums(L.values, grid, i_h)


def harvest_solve(spec: HarvestSpec, n_t: int = 16, n_x: int | None = None,
                  tol: float = 1e-12) -> tuple[Field2D, AdjointSolution]:
    """Optimal harvesting rate ``u* = 2 / (p + (L * 1))`` with its adjoint.

    Raises
    ------
    SingularControlError
        If ``p + (L * 1)`` vanishes at some node.
    """
    grid = GridSpec(spec.T, spec.X, n_t, n_t if n_x is None else n_x)
    adj = solve_adjoint_deterministic(spec.alpha0, spec.beta0, spec.theta, grid, tol=tol)
    denom = adj.p.values + star_one_expansion(adj.L)
    scale = max(1.0, float(np.max(np.abs(denom))))
    bad = np.abs(denom) <= 1e-14 * scale
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise SingularControlError((int(i), int(j)))
    return Field2D(grid, 2.0 / denom), adj


# ----------------------------------------------------------------------------
# Learning rate


@dataclass(frozen=True)
class MLSpec:
    beta0: float = 0.0
    theta: float = 1.0
    T: float = 1.0
    X: float = 1.0
    y0: float = 1.0
    gamma: float = 0.5
    max_sweeps: int = 200
    tol: float = 1e-6
    rule: str = "stationary"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("damping gamma must lie in (0, 1]")
        if self.theta < 0.0:
            raise ValueError("theta must be non-negative")
        if self.rule not in ("stationary", "printed"):
            raise ValueError("rule must be 'stationary' or 'printed'")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ValueError("max_sweeps must be a positive integer")


def ml_problem(spec: MLSpec) -> ControlProblem:
    b0, theta = float(spec.beta0), float(spec.theta)
    zeros = lambda t, x, y, u: np.zeros(np.broadcast(t, x, y, u).shape)
    return ControlProblem(
        alpha=lambda t, x, y, u: -u * y,
        beta=lambda t, x, y, u: b0 + zeros(t, x, y, u),
        cost=lambda t, x, y, u: -u * u + 0.0 * y,
        terminal=lambda y: -theta * y * y,
        T=spec.T, X=spec.X, y0=spec.y0,
        dalpha_dy=lambda t, x, y, u: -u + 0.0 * y,
        dalpha_du=lambda t, x, y, u: -y + 0.0 * u,
        dbeta_dy=zeros,
        dbeta_du=zeros,
        dcost_dy=zeros,
        dcost_du=lambda t, x, y, u: -2.0 * u + 0.0 * y,
        dterminal=lambda y: -2.0 * theta * y,
        name="ml",
    )


def _ml_target(rule: str, Y, p, L, grid: GridSpec) -> np.ndarray:
    # the printed H gives dH/du = -2u - Y p - (L * Y); "stationary" is its root
    half = 0.5 * (Y * p + _star(L, Y, grid, grid.n_t))
    return -half if rule == "stationary" else half


@dataclass(frozen=True, eq=False)
class MLResult:
    Y: Field2D
    p: Field2D
    L: Field2D
    u: Field2D
    sweeps: int
    converged: bool
    history: list = field(repr=False)
    residuals: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        from .io import write_node_csv

        write_node_csv(path, self.Y.grid, {"Y": self.Y.values, "p": self.p.values,
                                           "L": self.L.values, "u": self.u.values})


def ml_forward_backward_sweep(spec: MLSpec, n_t: int = 32, n_x: int | None = None,
                              sheet: SheetPath | None = None, u_init=None,
                              raise_on_failure: bool = True) -> MLResult:
    """Damped forward-backward sweep for the learning-rate problem.

    Each sweep solves the state forward under ``u``, then the deterministic
    pair ``p = -2 theta Y(T, X) - int_{R_Z \\ R_z} L``, ``L = u p + (L * u)``,
    and moves ``u`` a fraction ``gamma`` towards the control rule.  With
    ``sheet`` the state follows that one noise path and the adjoint is solved
    pathwise (a demonstration, not an adapted solution).

    The loop stops once ``sup |rule(u) - u| < tol``; the sup-norm update of
    the following sweep would then be below ``gamma * tol``.  ``sweeps``
    counts the control updates performed.

    Raises
    ------
    ConvergenceError
        If ``max_sweeps`` updates do not reach ``tol`` (only when
        ``raise_on_failure``); ``residuals`` holds the update history.
    """
    if sheet is None and spec.beta0 != 0.0:
        raise ValueError("deterministic mode requires beta0 = 0")
    grid = GridSpec(spec.T, spec.X, n_t, n_t if n_x is None else n_x)
    if sheet is not None and sheet.grid != grid:
        raise ValueError("sheet lives on a different grid")
    driver = grid if sheet is None else sheet
    problem = ml_problem(spec)
    u = np.zeros(grid.shape) if u_init is None else np.array(np.broadcast_to(
        u_init.values if isinstance(u_init, Field2D) else u_init, grid.shape), dtype=float)

    def solve_all(u, p0=None, L0=None):
        Y = solve_forward(problem, Field2D(grid, u), driver).Y.values
        adj = solve_adjoint_linear(-2.0 * spec.theta * Y[-1, -1], u, u, grid,
                                   tol=1e-13, p_init=p0, L_init=L0)
        return Y, adj

    history = []
    converged = False
    p = L = None
    while True:
        Y, adj = solve_all(u, p, L)
        p, L = adj.p.values, adj.L.values
        step = _ml_target(spec.rule, Y, p, L, grid) - u
        gap = float(np.max(np.abs(step)))
        # the next update would be gamma * gap; stopping on gap itself also
        # certifies the control equation to tol
        if gap < spec.tol:
            converged = True
            break
        if not math.isfinite(gap) or len(history) >= spec.max_sweeps:
            break
        u = u + spec.gamma * step
        history.append(spec.gamma * gap)
    if not converged and raise_on_failure:
        raise ConvergenceError(f"sweep did not converge in {len(history)} sweeps", history)
    xi = -2.0 * spec.theta * Y[-1, -1]
    res = adjoint_residuals(adj, xi, u, u)
    dH = Hamiltonian(problem, grid).dH_du(Y, u, adj.p, 0.0, adj.L)
    state = Y - solve_forward(problem, Field2D(grid, u), driver).Y.values
    residuals = {
        "control": float(np.max(np.abs(u - _ml_target(spec.rule, Y, adj.p.values, adj.L.values, grid)))),
        "state": float(np.max(np.abs(state))),
        "L": res["L"],
        "adjoint": res["backward"],
        "dH_du": float(np.max(np.abs(dH))),
    }
    return MLResult(Field2D(grid, Y), adj.p, adj.L, Field2D(grid, u), len(history), converged,
                    history, residuals)


# ----------------------------------------------------------------------------
# Perturbation checks


@dataclass(frozen=True)
class PerturbationRow:
    direction: str
    eps: float
    J: float
    se: float
    diff: float
    diff_se: float


@dataclass(frozen=True)
class Derivative:
    direction: str
    step: float
    dJ: float
    se: float


@dataclass(frozen=True)
class DominanceTable:
    """Base and perturbed performance on common random numbers.

    ``diff`` and ``diff_se`` are the paired difference ``J(u + eps v) - J(u)``
    and its standard error.
    """

    J_base: float
    se_base: float
    rows: tuple
    derivatives: tuple
    n_paths: int

    def dominated(self, k: float = 2.0) -> bool:
        """Every perturbation is no better than the base by more than ``k`` SE."""
        return all(r.diff <= k * r.diff_se for r in self.rows)

    def stationary(self, k: float = 2.0, floor: float = 0.0) -> bool:
        """Every ``|dJ/deps|`` is within ``k`` SE (plus ``floor``) of zero."""
        return all(abs(d.dJ) <= k * d.se + floor for d in self.derivatives)

    def max_z(self) -> float:
        return max((abs(d.dJ) / d.se if d.se > 0 else math.inf * (d.dJ != 0)) for d in self.derivatives)

    def to_csv(self, path) -> None:
        from .io import write_rows_csv

        rows = [("base", 0.0, self.J_base, self.se_base, 0.0, 0.0)]
        rows += [(r.direction, r.eps, r.J, r.se, r.diff, r.diff_se) for r in self.rows]
        write_rows_csv(path, ["direction", "eps", "J", "se", "diff", "diff_se"], rows)


def _perturbed(u_hat, v: Field2D, eps: float, grid: GridSpec):
    if callable(u_hat) and not isinstance(u_hat, Field2D):
        vals = v.values
        return lambda t, x, y: u_hat(t, x, y) + eps * vals[grid.t_index(t)]
    base = u_hat.values if isinstance(u_hat, Field2D) else np.broadcast_to(float(u_hat), grid.shape)
    return Field2D(grid, base + eps * v.values)


def perturbation_dominance(problem: ControlProblem, u_hat, directions: dict | Sequence[Field2D],
                           epsilons: Sequence[float], n_paths: int | None, seed, grid: GridSpec,
                           deriv_step: float | None = None) -> DominanceTable:
    """Estimate ``J(u_hat + eps v)`` for every direction and step.

    ``n_paths=None`` evaluates the noiseless problem once (standard errors
    are zero).  The derivative at ``eps = 0`` is the central difference with
    step ``deriv_step`` (default: the smallest ``|eps|``).
    """
    if not isinstance(directions, dict):
        directions = {f"v{k}": v for k, v in enumerate(directions)}
    if not directions or not epsilons:
        raise ValueError("need at least one direction and one step")
    for v in directions.values():
        if not isinstance(v, Field2D) or v.grid != grid:
            raise ValueError("directions must be node fields on the evaluation grid")

    if n_paths is None:
        def rewards(u):
            sol = solve_forward(problem, u, grid)
            return np.atleast_1d(path_rewards(problem, sol))
    else:
        def rewards(u):
            return path_statistics(problem, u, n_paths, seed, grid)["reward"]

    base = rewards(u_hat)
    J0, se0 = mean_and_se(base)
    cache = {}

    def cell(name, eps):
        key = (name, float(eps))
        if key not in cache:
            cache[key] = rewards(_perturbed(u_hat, directions[name], eps, grid))
        return cache[key]

    rows = []
    for name in directions:
        for eps in epsilons:
            r = cell(name, eps)
            J, se = mean_and_se(r)
            d, dse = mean_and_se(r - base)
            rows.append(PerturbationRow(name, float(eps), J, se, d, dse))
    step = float(deriv_step) if deriv_step is not None else min(abs(e) for e in epsilons if e != 0)
    derivs = []
    for name in directions:
        diff = (cell(name, step) - cell(name, -step)) / (2.0 * step)
        d, dse = mean_and_se(diff)
        derivs.append(Derivative(name, step, d, dse))
    return DominanceTable(J0, se0, tuple(rows), tuple(derivs), base.size)
