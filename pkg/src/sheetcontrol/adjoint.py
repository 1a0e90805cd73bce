"""Hamiltonian with star term and the deterministic plane adjoints built on it.

Only deterministic-coefficient adjoints are solved here: with a constant
terminal value and constant coefficients the ansatz ``q = 0, r = 0`` with
``p`` deterministic is consistent, and the backward equation

    p(z) = xi - int_{R_Z \\ R_z} D(zeta) dzeta

becomes a deterministic integral equation over the L-shaped set of cells
outside ``R_z``.  That region couples every node to every other one, so
``p`` and ``L`` are found by fixed-point iteration rather than by a sweep.

Star-term derivatives follow one rule throughout: ``d/du (L * alpha)`` is
``L * (d alpha / d u)`` with the partial evaluated along the state and
control fields.  This reproduces ``(L * 1)`` for harvesting and ``(L * Y)``,
``(L * u)`` for the learning-rate problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calculus import star_region_sums
from .forward import ControlProblem
from .grid import Field2D, GridSpec

__all__ = [
    "ConvergenceError",
    "Hamiltonian",
    "AdjointSolution",
    "hamiltonian_eval",
    "dH_du",
    "backward_integral",
    "star_fixed_point",
    "solve_L_fixed_point",
    "solve_adjoint_deterministic",
    "solve_adjoint_linear",
    "adjoint_residuals",
    "zaidi_nualart_radius",
]

PICARD_TOL = 1e-10
PICARD_MAX_ITER = 500


class ConvergenceError(ArithmeticError):
    """A fixed-point iteration stopped without meeting its tolerance."""

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        self.residuals = list(residuals)
        last = self.residuals[-1] if self.residuals else float("nan")
        super().__init__(f"{message} (last residual {last:.3e})")


def _nodes(v, grid: GridSpec) -> np.ndarray:
    if isinstance(v, Field2D):
        return v.values
    return np.broadcast_to(np.asarray(v, dtype=float), grid.shape)


def _star(a: np.ndarray, b: np.ndarray, grid: GridSpec, i_h: int) -> np.ndarray:
    return a * star_region_sums(b, grid, i_h) + b * star_region_sums(a, grid, i_h)


def _call(fn, name: str, *args):
    if fn is None:
        raise ValueError(f"problem lacks the derivative callback {name}")
    return np.asarray(fn(*args), dtype=float)


@dataclass(frozen=True)
class Hamiltonian:
    """``H = f + p alpha + q beta + (L * alpha)`` for ``problem`` on ``grid``.

    Field-valued methods take the state ``Y`` and control ``u`` as node
    fields (or scalars) and return node arrays.  The star term always uses
    ``horizon`` (default ``T``) as the upper time limit.
    """

    problem: ControlProblem
    grid: GridSpec
    horizon: float | None = None

    @property
    def i_h(self) -> int:
        return self.grid.t_index(self.grid.T if self.horizon is None else self.horizon)

    def _coords(self):
        return self.grid.mesh()

    def value(self, Y, u, p, q, L) -> np.ndarray:
        tt, xx = self._coords()
        y, uu = _nodes(Y, self.grid), _nodes(u, self.grid)
        pr = self.problem
        a = np.broadcast_to(pr.alpha(tt, xx, y, uu), self.grid.shape)
        b = np.broadcast_to(pr.beta(tt, xx, y, uu), self.grid.shape)
        f = np.broadcast_to(pr.cost(tt, xx, y, uu), self.grid.shape)
        Lv = _nodes(L, self.grid)
        return f + _nodes(p, self.grid) * a + _nodes(q, self.grid) * b + _star(Lv, a, self.grid, self.i_h)

    def dH_du(self, Y, u, p, q, L) -> np.ndarray:
        tt, xx = self._coords()
        y, uu = _nodes(Y, self.grid), _nodes(u, self.grid)
        pr = self.problem
        da = np.broadcast_to(_call(pr.dalpha_du, "dalpha_du", tt, xx, y, uu), self.grid.shape)
        db = _call(pr.dbeta_du, "dbeta_du", tt, xx, y, uu)
        df = _call(pr.dcost_du, "dcost_du", tt, xx, y, uu)
        Lv = _nodes(L, self.grid)
        return df + _nodes(p, self.grid) * da + _nodes(q, self.grid) * db + _star(Lv, da, self.grid, self.i_h)

    def dH_dy(self, Y, u, p, q, L) -> np.ndarray:
        tt, xx = self._coords()
        y, uu = _nodes(Y, self.grid), _nodes(u, self.grid)
        pr = self.problem
        da = np.broadcast_to(_call(pr.dalpha_dy, "dalpha_dy", tt, xx, y, uu), self.grid.shape)
        db = _call(pr.dbeta_dy, "dbeta_dy", tt, xx, y, uu)
        df = _call(pr.dcost_dy, "dcost_dy", tt, xx, y, uu)
        Lv = _nodes(L, self.grid)
        return df + _nodes(p, self.grid) * da + _nodes(q, self.grid) * db + _star(Lv, da, self.grid, self.i_h)

    def check_derivatives(self, n_probes: int = 20, seed: int = 0, step: float = 1e-5) -> float:
        """Largest gap between the derivative callbacks and central differences
        of ``alpha``, ``beta`` and ``cost`` at random ``(t, x, y, u)`` probes."""
        rng = np.random.default_rng(seed)
        pr = self.problem
        lo, hi = pr.u_bounds
        worst = 0.0
        for _ in range(n_probes):
            t = rng.uniform(0, pr.T)
            x = rng.uniform(0, pr.X)
            y = rng.uniform(0.5, 2.0)
            u = rng.uniform(max(lo, 0.5), min(hi, 2.0)) if math.isfinite(lo) else rng.uniform(0.5, 2.0)
            for fn, dy, du in ((pr.alpha, pr.dalpha_dy, pr.dalpha_du),
                               (pr.beta, pr.dbeta_dy, pr.dbeta_du),
                               (pr.cost, pr.dcost_dy, pr.dcost_du)):
                fd_y = (fn(t, x, y + step, u) - fn(t, x, y - step, u)) / (2 * step)
                fd_u = (fn(t, x, y, u + step) - fn(t, x, y, u - step)) / (2 * step)
                worst = max(worst, abs(float(dy(t, x, y, u)) - float(fd_y)),
                            abs(float(du(t, x, y, u)) - float(fd_u)))
        return worst


def hamiltonian_eval(z, y: float, u: float, p: float, q: float, L_field: Field2D,
                     problem: ControlProblem, horizon: float | None = None) -> float:
    """``H(z, y, u, p, q, L)`` at node ``z`` with ``y`` and ``u`` held fixed
    across the star region."""
    grid = L_field.grid
    i, j = grid.node_index(z)
    return float(Hamiltonian(problem, grid, horizon).value(y, u, p, q, L_field)[i, j])


def dH_du(z, y: float, u: float, p: float, q: float, L_field: Field2D,
          problem: ControlProblem, horizon: float | None = None,
          Y_field=None, u_field=None) -> float:
    """Partial of the Hamiltonian in ``u`` at node ``z``.

    When ``Y_field`` / ``u_field`` are given, the star term's partial is taken
    along those fields; otherwise ``y`` and ``u`` are used everywhere.

    Raises
    ------
    ZeroDivisionError
        If the problem's ``dcost_du`` is singular at ``u`` (``ln u^2`` at 0).
    """
    grid = L_field.grid
    i, j = grid.node_index(z)
    Y = y if Y_field is None else Y_field
    uu = u if u_field is None else u_field
    if Y_field is not None or u_field is not None:
        Y = np.array(_nodes(Y, grid))
        uu = np.array(_nodes(uu, grid))
        Y[i, j], uu[i, j] = y, u
    return float(Hamiltonian(problem, grid, horizon).dH_du(Y, uu, p, q, L_field)[i, j])


def backward_integral(values, grid: GridSpec) -> np.ndarray:
    """``int_{R_Z \\ R_z} f`` at every node, reading each cell's upper-right corner.

    Mirror image of the forward rule: cell ``(k, l)`` contributes
    ``f(k+1, l+1) * dt * dx`` to every node ``(i, j)`` with ``k >= i`` or ``l >= j``.
    """
    f = _nodes(values, grid) if not isinstance(values, np.ndarray) else values
    ur = f[..., 1:, 1:]
    c = np.zeros(f.shape[:-2] + grid.shape)
    c[..., 1:, 1:] = np.cumsum(np.cumsum(ur, axis=-2), axis=-1)
    total = c[..., -1:, -1:]
    return (total - c) * grid.cell_area


def star_fixed_point(rhs, coef, grid: GridSpec, horizon: float | None = None,
                     tol: float = PICARD_TOL, max_iter: int = PICARD_MAX_ITER,
                     L_init=None) -> tuple[np.ndarray, int, float]:
    """Picard iteration for ``L = rhs + (L * coef)``.

    Returns ``(L, iterations, last_update)``; raises :class:`ConvergenceError`
    when ``max_iter`` sweeps do not bring the sup-norm update below ``tol``.
    """
    i_h = grid.t_index(grid.T if horizon is None else horizon)
    rhs = _nodes(rhs, grid)
    coef = _nodes(coef, grid)
    L = np.zeros(grid.shape) if L_init is None else np.array(_nodes(L_init, grid))
    history = []
    for it in range(1, max_iter + 1):
        nxt = rhs + _star(L, coef, grid, i_h)
        upd = float(np.max(np.abs(nxt - L)))
        L = nxt
        history.append(upd)
        if not math.isfinite(upd):
            raise ConvergenceError("L iteration diverged", history)
        if upd < tol:
            return L, it, upd
    raise ConvergenceError(f"L iteration did not converge in {max_iter} sweeps", history)


def solve_L_fixed_point(p: Field2D, q: Field2D, alpha0: float, beta0: float,
                        horizon: float | None = None, tol: float = PICARD_TOL,
                        max_iter: int = PICARD_MAX_ITER, return_info: bool = False):
    """Solve ``L = -[alpha0 p + beta0 q + alpha0 (L * 1)]`` by Picard iteration from 0.

    The star map ``L -> alpha0 (L * 1)`` has sup-norm at most
    ``2 |alpha0| T X``, so the iteration contracts when that is below one.
    """
    grid = p.grid
    rhs = -(alpha0 * p.values + beta0 * _nodes(q, grid))
    L, it, upd = star_fixed_point(rhs, -alpha0, grid, horizon, tol, max_iter)
    out = Field2D(grid, L)
    if return_info:
        return out, {"iterations": it, "last_update": upd}
    return out


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    p: Field2D
    q: Field2D
    L: Field2D
    picard_iterations: int
    final_residual: float

    def to_csv(self, path) -> None:
        from .io import write_node_csv

        write_node_csv(path, self.p.grid, {"p": self.p.values, "q": self.q.values, "L": self.L.values})


def solve_adjoint_linear(xi, a, c, grid: GridSpec, horizon: float | None = None,
                         tol: float = 1e-9, max_iter: int = PICARD_MAX_ITER,
                         p_init=None, L_init=None) -> AdjointSolution:
    """Joint Picard iteration for the deterministic pair

        p = xi - int_{R_Z \\ R_z} L,      L = a p + (L * c).

    Every deterministic adjoint shipped here has this shape: the driver of
    the backward equation equals ``L = -dH/dy``.  ``xi`` is the (constant)
    terminal value; ``a`` and ``c`` are node fields or scalars.  Stops when
    the joint sup-norm update drops below ``tol``.
    """
    i_h = grid.t_index(grid.T if horizon is None else horizon)
    a = _nodes(a, grid)
    c = _nodes(c, grid)
    xi = float(xi)
    p = np.full(grid.shape, xi) if p_init is None else np.array(_nodes(p_init, grid))
    L = np.zeros(grid.shape) if L_init is None else np.array(_nodes(L_init, grid))
    history = []
    for it in range(1, max_iter + 1):
        p_new = xi - backward_integral(L, grid)
        L_new = a * p_new + _star(L, c, grid, i_h)
        upd = max(float(np.max(np.abs(p_new - p))), float(np.max(np.abs(L_new - L))))
        p, L = p_new, L_new
        history.append(upd)
        if not math.isfinite(upd):
            raise ConvergenceError("adjoint iteration diverged", history)
        if upd < tol:
            return AdjointSolution(Field2D(grid, p), Field2D(grid, np.zeros(grid.shape)),
                                   Field2D(grid, L), it, upd)
    raise ConvergenceError(f"adjoint iteration did not converge in {max_iter} sweeps", history)


def solve_adjoint_deterministic(alpha0: float, beta0: float, terminal_value: float,
                                grid: GridSpec, horizon: float | None = None,
                                tol: float = 1e-9, max_iter: int = PICARD_MAX_ITER) -> AdjointSolution:
    """Deterministic adjoint of the linear-drift problem with constant terminal value.

    Solves

        p = xi + int_{R_Z \\ R_z} (alpha0 p + alpha0 (L * 1))
        L = -[alpha0 p + beta0 q + alpha0 (L * 1)]

    with ``q = 0``.  ``beta0`` drops out under that ansatz but is kept in
    the signature so callers pass the full model.
    """
    return solve_adjoint_linear(terminal_value, -alpha0, -alpha0, grid, horizon, tol, max_iter)


def adjoint_residuals(sol: AdjointSolution, xi: float, a, c, horizon: float | None = None) -> dict:
    """Sup-norm residuals of the backward identity and of the L equation."""
    grid = sol.p.grid
    i_h = grid.t_index(grid.T if horizon is None else horizon)
    p, L = sol.p.values, sol.L.values
    back = p - float(xi) + backward_integral(L, grid)
    eq_L = L - _nodes(a, grid) * p - _star(L, _nodes(c, grid), grid, i_h)
    return {"backward": float(np.max(np.abs(back))), "L": float(np.max(np.abs(eq_L)))}


def zaidi_nualart_radius(K1: float, K2: float, z0: Sequence[float], r0: float | None = None) -> bool:
    """Whether ``K1 |z0| < sqrt(r0)`` and ``K2 |z0| < sqrt(r0)``.

    ``|z0|`` is taken as the area ``t0 * x0`` of ``R_{z0}``.  ``r0`` defaults to
    the computed first zero of ``f0``.
    """
    if K1 < 0 or K2 < 0:
        raise ValueError("Lipschitz constants must be non-negative")
    if r0 is None:
        from .special import find_r0

        r0 = find_r0()
    size = z0[0] * z0[1]
    bound = math.sqrt(r0)
    return bool(K1 * size < bound and K2 * size < bound)
