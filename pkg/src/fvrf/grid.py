"""Equispaced grids, trapezoid quadrature and L2 geometry for sampled fields.

Two grid kinds are supported:

* ``Grid1D`` -- periodic mesh of the unit torus. Only the ``n_unique`` distinct
  nodes ``x_j = j / n_unique`` are stored; files carry ``K = n_unique + 1``
  nodes with the endpoint repeated.
* ``Grid2D`` -- boundary-inclusive ``r x r`` mesh of the unit square, row-major
  (second index fastest).

Field values are plain numpy arrays whose trailing axes match ``grid.shape``;
any leading axes are batch axes. :class:`GridFunction` pairs one such array
with its grid for the single-field API.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid1D:
    n_unique: int

    def __post_init__(self):
        n = self.n_unique
        if not isinstance(n, (int, np.integer)) or not _is_pow2(int(n)) or n < 16:
            raise ValueError(f"Grid1D needs n_unique = 2^p with p >= 4, got {n}")

    ndim = 1

    @property
    def K(self) -> int:
        """External mesh size (periodic endpoint counted twice)."""
        return self.n_unique + 1

    @property
    def h(self) -> float:
        return 1.0 / self.n_unique

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_unique,)

    @property
    def size(self) -> int:
        return self.n_unique

    def nodes(self) -> np.ndarray:
        return np.arange(self.n_unique) * self.h

    @cached_property
    def weights(self) -> np.ndarray:
        # trapezoid rule on a periodic mesh collapses to the rectangle rule
        w = np.full(self.n_unique, self.h)
        w.setflags(write=False)
        return w

    def coarsen(self, factor: int) -> "Grid1D":
        if factor < 1 or self.n_unique % factor:
            raise ValueError(f"factor {factor} does not divide n_unique={self.n_unique}")
        return Grid1D(self.n_unique // factor)

    @classmethod
    def from_K(cls, K: int) -> "Grid1D":
        return cls(int(K) - 1)


@dataclass(frozen=True)
class Grid2D:
    r: int

    def __post_init__(self):
        r = self.r
        if not isinstance(r, (int, np.integer)) or r < 3 or not _is_pow2(int(r) - 1):
            raise ValueError(f"Grid2D needs r = 2^p + 1, got {r}")

    ndim = 2

    @property
    def K(self) -> int:
        return self.r * self.r

    @property
    def h(self) -> float:
        return 1.0 / (self.r - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.r, self.r)

    @property
    def size(self) -> int:
        return self.r * self.r

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X1, X2)`` of shape ``(r, r)``; ``X1`` varies along axis 0."""
        x = np.arange(self.r) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        w1 = np.ones(self.r)
        w1[0] = w1[-1] = 0.5
        w = np.outer(w1, w1) * self.h**2
        w.setflags(write=False)
        return w

    def coarsen(self, factor: int) -> "Grid2D":
        if factor < 1 or (self.r - 1) % factor:
            raise ValueError(f"factor {factor} does not divide r-1={self.r - 1}")
        return Grid2D((self.r - 1) // factor + 1)


Grid = Grid1D | Grid2D


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A real field sampled on ``grid``; ``values`` has shape ``grid.shape``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            if values.ndim == 1 and values.size == self.grid.size:
                values = values.reshape(self.grid.shape)
            else:
                raise ValueError(f"values of shape {values.shape} do not fit {self.grid}")
        if not np.all(np.isfinite(values)):
            raise ValueError("GridFunction values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        if grid.ndim == 1:
            return cls(grid, fn(grid.nodes()))
        return cls(grid, fn(*grid.nodes()))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, c * self.values)

    __rmul__ = __mul__


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


def weighted_inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Batched trapezoid L2 inner product over the trailing grid axes."""
    axes = tuple(range(-grid.ndim, 0))
    return np.sum(f * g * grid.weights, axis=axes)


def inner_product_l2(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(weighted_inner(f.grid, f.values, g.values))


def norm_l2(f: GridFunction) -> float:
    return float(np.sqrt(inner_product_l2(f, f)))


def relative_l2_errors(grid: Grid, truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-sample ``||truth - pred|| / ||truth||`` over leading batch axes."""
    num = weighted_inner(grid, truth - pred, truth - pred)
    den = weighted_inner(grid, truth, truth)
    if np.any(den <= 0):
        raise ValueError("relative error undefined for a truth field of zero norm")
    return np.sqrt(num / den)


def relative_l2_error(truth: GridFunction, pred: GridFunction) -> float:
    _check_same_grid(truth, pred)
    return float(relative_l2_errors(truth.grid, truth.values, pred.values))


def restrict_values(grid: Grid, values: np.ndarray, factor: int) -> tuple[Grid, np.ndarray]:
    """Strided subsampling of (batched) values; keeps node 0 and, in 2D, all boundaries."""
    coarse = grid.coarsen(factor)
    if grid.ndim == 1:
        out = values[..., ::factor]
    else:
        out = values[..., ::factor, ::factor]
    return coarse, np.ascontiguousarray(out)


def restrict(f: GridFunction, factor: int) -> GridFunction:
    coarse, values = restrict_values(f.grid, f.values, factor)
    return GridFunction(coarse, values)


def restriction_factor(fine: Grid, coarse: Grid) -> int:
    """Integer stride mapping ``fine`` onto ``coarse``; raises if none exists."""
    if type(fine) is not type(coarse):
        raise ValueError(f"cannot restrict {fine} to {coarse}")
    nf = fine.n_unique if fine.ndim == 1 else fine.r - 1
    nc = coarse.n_unique if coarse.ndim == 1 else coarse.r - 1
    if nc > nf or nf % nc:
        raise ValueError(f"{coarse} is not a restriction of {fine}")
    return nf // nc


def grid_from_shape(shape: tuple[int, ...], *, external: bool = True) -> Grid:
    """Grid for a field of ``shape``; 1D shapes count the repeated endpoint when ``external``."""
    if len(shape) == 1:
        return Grid1D.from_K(shape[0]) if external else Grid1D(shape[0])
    if len(shape) == 2 and shape[0] == shape[1]:
        return Grid2D(shape[0])
    raise ValueError(f"no grid matches field shape {shape}")
