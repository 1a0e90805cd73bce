"""Uniform time-space grids and Brownian-sheet sampling.

A Brownian sheet on ``[0, T] x [0, X]`` is sampled through its cell
increments: each grid cell ``[t_i, t_{i+1}] x [x_j, x_{j+1}]`` receives an
independent ``Normal(0, dt * dx)`` draw, and node values are the 2-D
cumulative sums of those draws, so ``B`` vanishes on both axes.

Randomness is organised by :class:`SeedSpec`.  Path ``k`` always draws from
the Philox stream keyed by ``(master_seed, k)``; generating paths in a
different order, in chunks or in parallel gives bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "GridSpec",
    "Field2D",
    "SeedSpec",
    "SheetPath",
    "SheetEnsemble",
    "sample_sheet",
    "sample_ensemble",
    "empirical_covariance",
]

_NODE_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform discretisation of the rectangle ``[0, T] x [0, X]``.

    ``n_t`` and ``n_x`` count cells, so there are ``(n_t + 1) x (n_x + 1)``
    nodes.
    """

    T: float
    X: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")
        if not (np.isfinite(self.X) and self.X > 0):
            raise ValueError(f"X must be positive, got {self.X}")
        for name in ("n_t", "n_x"):
            n = getattr(self, name)
            if int(n) != n or n < 1:
                raise ValueError(f"{name} must be a positive integer, got {n}")
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "X", float(self.X))

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return self.X / self.n_x

    @property
    def cell_area(self) -> float:
        return self.dt * self.dx

    @property
    def shape(self) -> tuple[int, int]:
        """Node array shape."""
        return (self.n_t + 1, self.n_x + 1)

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.n_t, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.X, self.n_x + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``shape`` arrays (``ij`` indexing)."""
        return np.meshgrid(self.t, self.x, indexing="ij")

    def t_index(self, t: float) -> int:
        return _snap(t, self.dt, self.n_t, "t")

    def x_index(self, x: float) -> int:
        return _snap(x, self.dx, self.n_x, "x")

    def node_index(self, point: Sequence[float]) -> tuple[int, int]:
        """Indices ``(i, j)`` of the grid node at ``point = (t, x)``.

        Raises
        ------
        ValueError
            If the point does not coincide with a grid node.
        """
        t, x = point
        return self.t_index(t), self.x_index(x)

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.T, self.X, self.n_t * factor, self.n_x * factor)


def _snap(value: float, step: float, n: int, axis: str) -> int:
    k = value / step
    i = int(round(k))
    if abs(k - i) > _NODE_TOL * max(1.0, abs(k)) or i < 0 or i > n:
        raise ValueError(f"node not on grid: {axis}={value!r}")
    return i


@dataclass(frozen=True, eq=False)
class Field2D:
    """Real values sampled on grid nodes or on grid cells.

    ``values`` may carry leading batch axes (one per Monte Carlo path, say);
    the trailing two axes must match the grid for the given placement.
    """

    grid: GridSpec
    values: np.ndarray
    placement: str = "node"

    def __post_init__(self):
        if self.placement not in ("node", "cell"):
            raise ValueError(f"placement must be 'node' or 'cell', got {self.placement!r}")
        values = np.asarray(self.values, dtype=float)
        expected = self.grid.shape if self.placement == "node" else self.grid.cell_shape
        if values.ndim < 2 or values.shape[-2:] != expected:
            raise ValueError(
                f"{self.placement} field needs trailing shape {expected}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable, placement: str = "node") -> "Field2D":
        """Evaluate ``fn(t, x)`` (vectorised) at nodes or at lower-left cell corners."""
        tt, xx = grid.mesh()
        if placement == "cell":
            tt, xx = tt[:-1, :-1], xx[:-1, :-1]
        values = np.broadcast_to(np.asarray(fn(tt, xx), dtype=float), tt.shape).copy()
        return cls(grid, values, placement)

    @classmethod
    def constant(cls, grid: GridSpec, c: float, placement: str = "node") -> "Field2D":
        shape = grid.shape if placement == "node" else grid.cell_shape
        return cls(grid, np.full(shape, float(c)), placement)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-2]

    def cell_values(self) -> np.ndarray:
        """Values per cell; node fields contribute their lower-left corners."""
        if self.placement == "cell":
            return self.values
        return self.values[..., :-1, :-1]

    def at(self, point: Sequence[float]):
        if self.placement != "node":
            raise ValueError("point lookup needs a node field")
        i, j = self.grid.node_index(point)
        return self.values[..., i, j]


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the per-path substream rule.

    Path ``k`` draws from ``Philox`` seeded by ``SeedSequence(master_seed,
    spawn_key=(k,))``.
    """

    master_seed: int = 0

    def __post_init__(self):
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def generator(self, path_index: int) -> np.random.Generator:
        if path_index < 0:
            raise ValueError("path_index must be non-negative")
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(path_index),))
        return np.random.Generator(np.random.Philox(ss))


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))


def _cumulate(increments: np.ndarray) -> np.ndarray:
    shape = increments.shape[:-2] + (increments.shape[-2] + 1, increments.shape[-1] + 1)
    nodes = np.zeros(shape)
    nodes[..., 1:, 1:] = np.cumsum(np.cumsum(increments, axis=-2), axis=-1)
    return nodes


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SheetPath:
    """A single Brownian-sheet realisation on ``grid``."""

    grid: GridSpec
    cell_increments: np.ndarray
    node_values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inc = _frozen(self.cell_increments)
        if inc.shape != self.grid.cell_shape:
            raise ValueError(f"increments must have shape {self.grid.cell_shape}, got {inc.shape}")
        object.__setattr__(self, "cell_increments", inc)
        object.__setattr__(self, "node_values", _frozen(_cumulate(inc)))

    @classmethod
    def zero(cls, grid: GridSpec) -> "SheetPath":
        """The noiseless path; solvers driven by it are deterministic."""
        return cls(grid, np.zeros(grid.cell_shape))

    @property
    def n_paths(self) -> int:
        return 1

    def B(self, t: float, x: float) -> float:
        i, j = self.grid.node_index((t, x))
        return float(self.node_values[i, j])

    def to_csv(self, path) -> None:
        from .io import write_node_csv

        write_node_csv(path, self.grid, {"B": self.node_values})


@dataclass(frozen=True, eq=False)
class SheetEnsemble:
    """Independent sheet paths stacked along a leading axis.

    ``ensemble[k]`` is the :class:`SheetPath` for ``path_indices[k]``.
    """

    grid: GridSpec
    cell_increments: np.ndarray
    path_indices: tuple = ()
    seed: SeedSpec | None = None
    node_values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inc = _frozen(self.cell_increments)
        if inc.ndim != 3 or inc.shape[1:] != self.grid.cell_shape:
            raise ValueError(
                f"ensemble increments need shape (n_paths, {self.grid.n_t}, {self.grid.n_x})"
            )
        object.__setattr__(self, "cell_increments", inc)
        object.__setattr__(self, "node_values", _frozen(_cumulate(inc)))
        if not self.path_indices:
            object.__setattr__(self, "path_indices", tuple(range(inc.shape[0])))

    @classmethod
    def from_paths(cls, paths: Iterable[SheetPath]) -> "SheetEnsemble":
        paths = list(paths)
        if not paths:
            raise ValueError("need at least one path")
        grid = paths[0].grid
        if any(p.grid != grid for p in paths):
            raise ValueError("paths live on different grids")
        return cls(grid, np.stack([p.cell_increments for p in paths]))

    @property
    def n_paths(self) -> int:
        return self.cell_increments.shape[0]

    def __len__(self) -> int:
        return self.n_paths

    def __getitem__(self, k: int) -> SheetPath:
        return SheetPath(self.grid, self.cell_increments[k])

    def B(self, t: float, x: float) -> np.ndarray:
        i, j = self.grid.node_index((t, x))
        return self.node_values[:, i, j]


def _draw(grid: GridSpec, gen: np.random.Generator) -> np.ndarray:
    return gen.standard_normal(grid.cell_shape) * np.sqrt(grid.cell_area)


def sample_sheet(grid: GridSpec, seed, path_index: int = 0) -> SheetPath:
    """Sample path ``path_index`` of the stream defined by ``seed``."""
    seed = _as_seed(seed)
    return SheetPath(grid, _draw(grid, seed.generator(path_index)))


def sample_ensemble(grid: GridSpec, seed, n_paths: int, start: int = 0) -> SheetEnsemble:
    """Paths ``start, ..., start + n_paths - 1`` stacked into an ensemble."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    seed = _as_seed(seed)
    indices = tuple(range(start, start + n_paths))
    inc = np.empty((n_paths,) + grid.cell_shape)
    for row, k in enumerate(indices):
        inc[row] = _draw(grid, seed.generator(k))
    return SheetEnsemble(grid, inc, indices, seed)


def empirical_covariance(paths, p1: Sequence[float], p2: Sequence[float]) -> tuple[float, float]:
    """Sample covariance of ``B(p1)`` and ``B(p2)`` across paths.

    Returns ``(cov, stderr)``; the standard error is that of the mean of the
    centred products.
    """
    if not isinstance(paths, SheetEnsemble):
        paths = SheetEnsemble.from_paths(paths)
    if paths.n_paths < 2:
        raise ValueError("need at least 2 paths")
    a = paths.B(*p1)
    b = paths.B(*p2)
    prod = (a - a.mean()) * (b - b.mean())
    n = prod.size
    cov = prod.sum() / (n - 1)
    se = prod.std(ddof=1) / np.sqrt(n)
    return float(cov), float(se)
