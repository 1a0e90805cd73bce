"""Forward Euler solver for controlled hyperbolic SPDEs on the grid.

The state equation

    Y(t, x) = Y(0, 0) + int_{R(t,x)} alpha(z, Y, u) dz + int_{R(t,x)} beta(z, Y, u) B(dz)

is discretised by evaluating both coefficients at each cell's lower-left
corner.  Node ``(i, j)`` only depends on cells strictly below-left of it, so
a whole time row of nodes is known before the next row is built: the solver
loops over time rows and vectorises over space and paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import Field2D, GridSpec, SheetEnsemble, sample_ensemble

__all__ = [
    "BlowUpError",
    "ControlProblem",
    "PathSolution",
    "solve_forward",
    "solve_mean_volterra",
    "estimate_J",
    "path_rewards",
    "path_statistics",
    "mean_and_se",
    "negativity_experiment",
    "NegativityEstimate",
]


class BlowUpError(ArithmeticError):
    """Raised when a sweep produces a non-finite value."""

    def __init__(self, node: tuple[int, int], what: str = "state"):
        self.node = node
        super().__init__(f"blow-up at node ({node[0]}, {node[1]}) in {what}")


def _zero(t, x, y, u):
    return np.zeros(np.broadcast(t, x, y, u).shape)


@dataclass(frozen=True)
class ControlProblem:
    """Coefficients and reward of a scalar control problem in the plane.

    Coefficient callables take ``(t, x, y, u)`` arrays and must broadcast.  The
    optional derivative callbacks are what :mod:`sheetcontrol.adjoint` uses
    to build Hamiltonian partials.
    """

    alpha: Callable
    beta: Callable
    T: float
    X: float
    y0: float
    cost: Callable = _zero
    terminal: Callable = lambda y: np.zeros_like(y)
    u_bounds: tuple[float, float] = (-np.inf, np.inf)
    dalpha_dy: Callable | None = None
    dalpha_du: Callable | None = None
    dbeta_dy: Callable | None = None
    dbeta_du: Callable | None = None
    dcost_dy: Callable | None = None
    dcost_du: Callable | None = None
    dterminal: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if not (self.T > 0 and self.X > 0):
            raise ValueError("horizon must satisfy T > 0 and X > 0")
        lo, hi = self.u_bounds
        if lo > hi:
            raise ValueError("empty control bounds")

    def grid(self, n_t: int, n_x: int | None = None) -> GridSpec:
        return GridSpec(self.T, self.X, n_t, n_t if n_x is None else n_x)


@dataclass(frozen=True, eq=False)
class PathSolution:
    """State (and the control actually applied) on every node of every path."""

    Y: Field2D
    u: Field2D
    sheet: object


def _feedback_or_field(u, grid: GridSpec):
    """Return a row evaluator ``row(i, t, x, y) -> u`` for fields, scalars or feedback rules."""
    if callable(u) and not isinstance(u, Field2D):
        return lambda i, t, x, y: np.broadcast_to(np.asarray(u(t, x, y), dtype=float), y.shape)
    if isinstance(u, Field2D):
        if u.grid != grid or u.placement != "node":
            raise ValueError("control must be a node field on the sheet's grid")
        vals = u.values
    else:
        vals = np.broadcast_to(np.asarray(u, dtype=float), grid.shape)
    return lambda i, t, x, y: np.broadcast_to(vals[..., i, :], y.shape)


def _sheet_parts(sheet, grid: GridSpec | None):
    if sheet is None:
        if grid is None:
            raise ValueError("deterministic solve needs a grid")
        return grid, np.zeros(grid.cell_shape)
    if isinstance(sheet, GridSpec):
        return sheet, np.zeros(sheet.cell_shape)
    return sheet.grid, sheet.cell_increments


def solve_forward(problem: ControlProblem, u, sheet) -> PathSolution:
    """Euler sweep of the state equation driven by ``sheet``.

    Parameters
    ----------
    problem : ControlProblem
    u : Field2D, scalar, or callable
        Open-loop node field (batch axes allowed) or a feedback rule
        ``u(t, x, y)``.  Feedback rules are evaluated at the current node
        before the cell update, which keeps the control adapted.
    sheet : SheetPath, SheetEnsemble, or GridSpec
        Passing a bare grid solves the noiseless equation.

    Raises
    ------
    BlowUpError
        If a non-finite state appears; carries the offending node.
    """
    grid, dB = _sheet_parts(sheet, None)
    if abs(grid.T - problem.T) > 1e-12 * problem.T or abs(grid.X - problem.X) > 1e-12 * problem.X:
        raise ValueError("sheet grid does not cover the problem horizon")
    control = _feedback_or_field(u, grid)
    batch = dB.shape[:-2]
    if isinstance(u, Field2D):
        batch = np.broadcast_shapes(batch, u.batch_shape)
    h = grid.cell_area
    t_nodes, x_nodes = grid.t, grid.x
    x_cells = x_nodes[:-1]

    Y = np.empty(batch + grid.shape)
    U = np.empty(batch + grid.shape)
    row = np.full(batch + (grid.n_x + 1,), float(problem.y0))
    for i in range(grid.n_t + 1):
        t = t_nodes[i]
        u_row = control(i, t, x_nodes, row)
        Y[..., i, :] = row
        U[..., i, :] = u_row
        if not np.all(np.isfinite(u_row)):
            raise BlowUpError(_first_bad(u_row, i), "control")
        if i == grid.n_t:
            break
        y_c, u_c = row[..., :-1], u_row[..., :-1]
        w = problem.alpha(t, x_cells, y_c, u_c) * h + problem.beta(t, x_cells, y_c, u_c) * dB[..., i, :]
        nxt = row.copy()
        nxt[..., 1:] += np.cumsum(w, axis=-1)
        if not np.all(np.isfinite(nxt)):
            raise BlowUpError(_first_bad(nxt, i + 1))
        row = nxt
    return PathSolution(Field2D(grid, Y), Field2D(grid, U), sheet)


def _first_bad(row: np.ndarray, i: int) -> tuple[int, int]:
    bad = ~np.isfinite(row)
    j = int(np.argwhere(bad.reshape(-1, bad.shape[-1]).any(axis=0))[0, 0])
    return (i, j)


def solve_mean_volterra(lambda_field: Field2D, y0: float) -> Field2D:
    """Solve ``m = y0 + int_{R_z} lambda * m`` with the forward sweep's quadrature."""
    grid = lambda_field.grid
    lam = lambda_field.values
    h = grid.cell_area
    m = np.empty(lam.shape)
    row = np.full(lam.shape[:-2] + (grid.n_x + 1,), float(y0))
    for i in range(grid.n_t + 1):
        m[..., i, :] = row
        if i == grid.n_t:
            break
        nxt = row.copy()
        nxt[..., 1:] += np.cumsum(lam[..., i, :-1] * row[..., :-1] * h, axis=-1)
        if not np.all(np.isfinite(nxt)):
            raise BlowUpError(_first_bad(nxt, i + 1), "mean")
        row = nxt
    return Field2D(grid, m)


def path_rewards(problem: ControlProblem, solution: PathSolution) -> np.ndarray:
    """Per-path ``int cost dz + terminal(Y(T, X))`` by the lower-left rectangle rule."""
    grid = solution.Y.grid
    tt, xx = grid.mesh()
    Yc = solution.Y.cell_values()
    Uc = solution.u.cell_values()
    running = problem.cost(tt[:-1, :-1], xx[:-1, :-1], Yc, Uc)
    running = np.broadcast_to(running, Yc.shape).sum(axis=(-2, -1)) * grid.cell_area
    return running + problem.terminal(solution.Y.values[..., -1, -1])


DEFAULT_CHUNK = 1000


def path_statistics(problem: ControlProblem, u, n_paths: int, seed, grid: GridSpec | None = None,
                    sheets: SheetEnsemble | None = None, chunk: int = DEFAULT_CHUNK) -> dict:
    """Per-path reward together with the terminal and minimum state.

    Without ``sheets`` the paths ``0..n_paths-1`` of ``seed`` are generated
    and solved ``chunk`` at a time, so memory stays bounded; the per-path
    streams make the result independent of ``chunk``.
    """
    if sheets is not None:
        parts = [sheets]
    else:
        if grid is None:
            raise ValueError("need a grid or a sheet ensemble")
        if n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        parts = (sample_ensemble(grid, seed, min(chunk, n_paths - s), start=s)
                 for s in range(0, n_paths, chunk))
    reward, terminal, minimum = [], [], []
    for part in parts:
        sol = solve_forward(problem, u, part)
        reward.append(np.broadcast_to(path_rewards(problem, sol), (part.n_paths,)))
        terminal.append(np.broadcast_to(sol.Y.values[..., -1, -1], (part.n_paths,)))
        minimum.append(np.broadcast_to(sol.Y.values.min(axis=(-2, -1)), (part.n_paths,)))
    return {
        "reward": np.concatenate(reward),
        "terminal": np.concatenate(terminal),
        "minimum": np.concatenate(minimum),
    }


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def estimate_J(problem: ControlProblem, u, n_paths: int, seed, grid: GridSpec | None = None,
               sheets: SheetEnsemble | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of the performance functional from the origin.

    Either pass ``grid`` (paths ``0..n_paths-1`` of ``seed`` are sampled) or a
    pre-sampled ``sheets`` ensemble for common random numbers.

    Returns
    -------
    (mean, standard_error)
    """
    if n_paths < 2 and sheets is None:
        raise ValueError("n_paths must be >= 2")
    stats = path_statistics(problem, u, n_paths, seed, grid, sheets)
    return mean_and_se(stats["reward"])


@dataclass(frozen=True)
class NegativityEstimate:
    probability: float
    stderr: float
    n_paths: int
    min_values: np.ndarray

    @property
    def lower_bound(self) -> float:
        """Estimate minus three standard errors."""
        return self.probability - 3.0 * self.stderr


def negativity_experiment(alpha0: float, beta0: float, y0: float, grid: GridSpec,
                          n_paths: int, seed, sheets: SheetEnsemble | None = None) -> NegativityEstimate:
    """Fraction of paths of ``Y = y0 + int alpha0 Y + int beta0 Y dB`` that go negative.

    A path counts when its minimum over all grid nodes is below zero.  The
    standard error is the binomial one, ``sqrt(p (1 - p) / n)``.  Pass
    ``sheets`` to reuse paths across calls (common random numbers).
    """
    if y0 <= 0:
        raise ValueError("y0 must be positive")
    problem = ControlProblem(
        alpha=lambda t, x, y, u: alpha0 * y,
        beta=lambda t, x, y, u: beta0 * y,
        T=grid.T, X=grid.X, y0=y0,
    )
    mins = path_statistics(problem, 0.0, n_paths, seed, grid, sheets)["minimum"]
    p = float(np.mean(mins < 0.0))
    n = mins.size
    return NegativityEstimate(p, float(np.sqrt(p * (1.0 - p) / n)), n, mins)
