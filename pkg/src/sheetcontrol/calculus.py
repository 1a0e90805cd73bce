"""Integrals over plane rectangles and the star operator.

Every quadrature in this module is the rectangle rule anchored at the
lower-left corner of each cell.  That is the same convention the Euler
scheme in :mod:`sheetcontrol.forward` uses for its stochastic integral, so
deterministic and stochastic discretisations stay mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Field2D, GridSpec, SheetEnsemble, SheetPath

__all__ = [
    "Rect",
    "Kernel2x2",
    "incomparable_indicator",
    "join",
    "lebesgue_integral_2d",
    "ito_integral_first",
    "ito_integral_second",
    "incomparable_support",
    "star",
    "star_region_sums",
    "ibp_second_moment_rhs",
]


@dataclass(frozen=True)
class Rect:
    """Grid-aligned rectangle ``[t0, t1] x [x0, x1]``."""

    grid: GridSpec
    t0: float
    x0: float
    t1: float
    x1: float

    def __post_init__(self):
        if self.t0 > self.t1 or self.x0 > self.x1:
            raise ValueError("rectangle corners out of order")
        # snapping validates alignment
        self.grid.node_index((self.t0, self.x0))
        self.grid.node_index((self.t1, self.x1))

    @classmethod
    def origin(cls, grid: GridSpec, t: float, x: float) -> "Rect":
        """``R_z = [0, t] x [0, x]``."""
        return cls(grid, 0.0, 0.0, t, x)

    @classmethod
    def full(cls, grid: GridSpec) -> "Rect":
        return cls(grid, 0.0, 0.0, grid.T, grid.X)

    @property
    def cell_slices(self) -> tuple[slice, slice]:
        i0, j0 = self.grid.node_index((self.t0, self.x0))
        i1, j1 = self.grid.node_index((self.t1, self.x1))
        return slice(i0, i1), slice(j0, j1)


def incomparable_indicator(z: Sequence[float], zp: Sequence[float]) -> int:
    """1 if ``z`` is no later in time and no earlier in space than ``zp``."""
    return int(z[0] <= zp[0] and z[1] >= zp[1])


def join(z: Sequence[float], zp: Sequence[float]) -> tuple:
    """Componentwise maximum of two points."""
    return (max(z[0], zp[0]), max(z[1], zp[1]))


def _check_grid(field: Field2D, grid: GridSpec) -> None:
    if field.grid != grid:
        raise ValueError("field and rectangle live on different grids")


def lebesgue_integral_2d(field: Field2D, rect: Rect):
    """Rectangle-rule integral of ``field`` over ``rect``.

    Batch axes of ``field`` are preserved, so an ensemble of fields gives one
    integral per member.
    """
    _check_grid(field, rect.grid)
    si, sj = rect.cell_slices
    cells = field.cell_values()[..., si, sj]
    return cells.sum(axis=(-2, -1)) * rect.grid.cell_area


def _increments(sheet) -> np.ndarray:
    if isinstance(sheet, (SheetPath, SheetEnsemble)):
        return sheet.cell_increments
    return np.asarray(sheet, dtype=float)


def ito_integral_first(integrand: Field2D, sheet, rect: Rect):
    """First-type integral ``sum_c phi(c) dB_c`` over the cells of ``rect``.

    The integrand is read at each cell's lower-left corner (or taken as the
    cell value for a cell field).  Adaptedness is the caller's contract.
    """
    _check_grid(integrand, rect.grid)
    si, sj = rect.cell_slices
    dB = _increments(sheet)[..., si, sj]
    phi = integrand.cell_values()[..., si, sj]
    return (phi * dB).sum(axis=(-2, -1))


def incomparable_support(grid: GridSpec) -> np.ndarray:
    """Boolean mask over ordered cell pairs ``(c, c')`` where ``c`` precedes
    ``c'`` in time and succeeds it in space.

    Indexed ``[i, j, k, l]`` for ``c = (i, j)``, ``c' = (k, l)``.  The exact
    diagonal ``c == c'`` is excluded: it has measure zero in the continuum
    but would contribute ``psi(c, c) * dt * dx`` to the mean on the grid.
    """
    i = np.arange(grid.n_t)[:, None, None, None]
    j = np.arange(grid.n_x)[None, :, None, None]
    k = np.arange(grid.n_t)[None, None, :, None]
    l = np.arange(grid.n_x)[None, None, None, :]
    mask = (i <= k) & (j >= l)
    return mask & ~((i == k) & (j == l))


@dataclass(frozen=True, eq=False)
class Kernel2x2:
    """Second-type integrand on ordered cell pairs, shape ``(n_t, n_x, n_t, n_x)``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        shape = self.grid.cell_shape * 2
        if values.shape != shape:
            raise ValueError(f"kernel needs shape {shape}, got {values.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def supported(cls, grid: GridSpec, values) -> "Kernel2x2":
        """Build a kernel, zeroing every entry outside the incomparable support."""
        values = np.broadcast_to(np.asarray(values, dtype=float), grid.cell_shape * 2)
        return cls(grid, np.where(incomparable_support(grid), values, 0.0))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Kernel2x2":
        """``fn(s, a, s2, a2)`` evaluated at lower-left corners of both cells."""
        t = grid.t[:-1]
        x = grid.x[:-1]
        vals = fn(
            t[:, None, None, None], x[None, :, None, None],
            t[None, None, :, None], x[None, None, None, :],
        )
        return cls.supported(grid, vals)


def ito_integral_second(kernel: Kernel2x2, sheet):
    """Second-type integral ``sum psi(c, c') dB_c dB_c'`` over incomparable pairs.

    Raises
    ------
    ValueError
        If the kernel is non-zero outside the incomparable support.
    """
    grid = kernel.grid
    if np.any(kernel.values[~incomparable_support(grid)] != 0.0):
        raise ValueError("kernel violates incomparability support")
    dB = _increments(sheet)
    if dB.shape[-2:] != grid.cell_shape:
        raise ValueError("sheet and kernel live on different grids")
    m = grid.n_t * grid.n_x
    flat = dB.reshape(dB.shape[:-2] + (m,))
    psi = kernel.values.reshape(m, m)
    return np.einsum("...a,...a->...", flat @ psi, flat)


def star_region_sums(values: np.ndarray, grid: GridSpec, i_h: int) -> np.ndarray:
    """``S(i, j) = sum of f over [t_i, t_{i_h}] x [0, x_j]`` by the rectangle rule.

    ``values`` are node values (batch axes allowed); nodes with ``i >= i_h``
    or ``j == 0`` get an empty region and therefore zero.
    """
    cells = np.array(values[..., :-1, :-1], dtype=float)
    cells[..., i_h:, :] = 0.0
    # reverse cumulative sum in time: sum_{k >= i} cells[k, l]
    rev = np.flip(np.cumsum(np.flip(cells, axis=-2), axis=-2), axis=-2)
    out = np.zeros(values.shape[:-2] + grid.shape)
    out[..., :-1, 1:] = np.cumsum(rev, axis=-1)
    return out * grid.cell_area


def _node_values(f, grid: GridSpec) -> np.ndarray:
    if isinstance(f, Field2D):
        if f.placement != "node":
            raise ValueError("star operator needs node fields")
        if f.grid != grid:
            raise ValueError("fields live on different grids")
        return f.values
    return np.broadcast_to(np.asarray(f, dtype=float), grid.shape)


def star(h: Field2D, k: Field2D, horizon_t: float | None = None) -> Field2D:
    """Star product ``(h * k)(t, x)``.

    .. math::

        (h \\star k)(t, x) = \\int_0^x \\int_t^{H} h(t, x) k(s, a) + h(s, a) k(t, x) \\, ds \\, da

    with ``H = horizon_t`` (defaults to the grid's ``T``).  Nodes later than
    the horizon have an empty region and get 0.

    Either argument may be a plain scalar or array broadcastable to the node
    grid of the other.
    """
    grid = h.grid if isinstance(h, Field2D) else k.grid
    i_h = grid.t_index(grid.T if horizon_t is None else horizon_t)
    hv = _node_values(h, grid)
    kv = _node_values(k, grid)
    out = hv * star_region_sums(kv, grid, i_h) + kv * star_region_sums(hv, grid, i_h)
    return Field2D(grid, out)


def ibp_second_moment_rhs(Y: Field2D, alpha: Field2D, beta: Field2D, z: Sequence[float],
                          per_path: bool = False):
    """Right-hand side of the integration-by-parts identity for ``E[Y(z)^2]``.

    ``Y(0)^2 + E int_{R_z} {2 Y alpha + beta^2 + (alpha * alpha)} dzeta``, where
    the star product uses the rectangle's own time coordinate as horizon.
    Inputs are node fields whose leading axis indexes paths (aligned path by
    path).  With ``per_path=True`` the per-path values are returned instead of
    their average.
    """
    grid = Y.grid
    if alpha.batch_shape != Y.batch_shape or beta.batch_shape != Y.batch_shape:
        raise ValueError("mismatched ensemble sizes")
    rect = Rect.origin(grid, *z)
    sq = 2.0 * Y.values * alpha.values + beta.values ** 2
    st = star(alpha, alpha, horizon_t=z[0]).values
    integrand = Field2D(grid, sq + st)
    rhs = Y.values[..., 0, 0] ** 2 + lebesgue_integral_2d(integrand, rect)
    if per_path:
        return rhs
    return float(np.mean(rhs))
