"""
Discretised L^2([0, 1]) primitives.

Functions live on the uniform grid t_i = (i + 1) / D and every inner product uses the
flat weight 1 / D (left Riemann sum), so that L^2 norms and Euclidean norms of the value
vectors differ only by the constant sqrt(1 / D).
"""
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import DimensionError, NumericalError, SingularOperatorError

if TYPE_CHECKING:
    from .covariance import CovOperator


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid on (0, 1] with points (i + 1) / D.

    Args:
        :n_points (int): Number of grid points D
    """
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValueError(f"n_points must be a positive integer, got {self.n_points}")
        object.__setattr__(self, 'n_points', int(self.n_points))

    @property
    def points(self):
        return np.arange(1, self.n_points + 1) / self.n_points

    @property
    def spacing(self):
        return 1.0 / self.n_points

    @classmethod
    def from_points(cls, points):
        """
        Recover the grid from its points, rejecting anything that is not (i + 1) / D.

        Args:
            :points (np.ndarray): Candidate grid points

        Returns:
            :grid (Grid): The matching uniform grid
        """
        points = np.asarray(points, dtype=float)
        grid = cls(len(points))
        if not np.allclose(points, grid.points, rtol=0, atol=1e-12):
            raise ValueError("Only the uniform grid (i + 1) / D is supported")
        return grid

    def index_of(self, t):
        """Index of the grid point closest to t."""
        if not 0.0 <= t <= 1.0:
            raise DimensionError(f"t = {t} lies outside [0, 1]")
        return int(np.clip(np.rint(t * self.n_points) - 1, 0, self.n_points - 1))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """
    A real function sampled on a Grid, or a stack of such functions.

    Args:
        :grid (Grid): The grid the values are sampled on
        :values (np.ndarray): Values with shape (D,) or (n, D)
    """
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim not in (1, 2) or values.shape[-1] != self.grid.n_points:
            raise DimensionError(
                f"values of shape {values.shape} do not match a grid of {self.grid.n_points} points")
        if not np.all(np.isfinite(values)):
            raise NumericalError("GridFunction values must be finite")
        object.__setattr__(self, 'values', values)

    @property
    def is_batch(self):
        return self.values.ndim == 2

    def __len__(self):
        if not self.is_batch:
            raise TypeError("A single GridFunction has no length; use grid.n_points")
        return self.values.shape[0]

    def __getitem__(self, idx):
        if not self.is_batch:
            raise TypeError("Only a batch of functions can be indexed")
        return GridFunction(self.grid, self.values[idx])

    def __iter__(self):
        if not self.is_batch:
            raise TypeError("Only a batch of functions can be iterated")
        for row in self.values:
            yield GridFunction(self.grid, row)

    def with_values(self, values):
        return GridFunction(self.grid, values)

    @classmethod
    def zeros(cls, grid, n=None):
        shape = (grid.n_points,) if n is None else (n, grid.n_points)
        return cls(grid, np.zeros(shape))

    @classmethod
    def from_callable(cls, grid, fn):
        return cls(grid, fn(grid.points))

    @classmethod
    def stack(cls, functions):
        """Stack single functions sharing a grid into one batch."""
        functions = list(functions)
        if len(functions) == 0:
            raise ValueError("Cannot stack an empty list of functions")
        grid = functions[0].grid
        for f in functions[1:]:
            check_same_grid(f, functions[0])
        return cls(grid, np.stack([f.values for f in functions]))


@dataclass(frozen=True)
class L2:
    """The flat-weight L^2 inner product."""


@dataclass(frozen=True, eq=False)
class CameronMartin:
    """The Cameron-Martin inner product <g, C^{-1} h> of a covariance operator."""
    cov: 'CovOperator'


InnerProductKind = Union[L2, CameronMartin]


def check_same_grid(f, g):
    if f.grid != g.grid:
        raise DimensionError(
            f"grid mismatch: {f.grid.n_points} vs {g.grid.n_points} points")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def l2_inner(f, g):
    """
    L^2([0, 1]) inner product by the left Riemann sum (1 / D) sum_i f_i g_i.

    Args:
        :f (GridFunction): First function (or batch)
        :g (GridFunction): Second function (or batch) on the same grid

    Returns:
        :inner (float or np.ndarray): The inner product, one value per batch row
    """
    check_same_grid(f, g)
    return _scalar(np.sum(f.values * g.values, axis=-1) / f.grid.n_points)


def basis_coefficients(f, C):
    """
    Coefficients <f, e_i> in the eigenbasis of C, ordered like C.eigenvalues.
    """
    if f.grid != C.grid:
        raise DimensionError("function and operator live on different grids")
    return f.values @ C.eigenfunctions.T / f.grid.n_points


def synthesize(coeffs, C):
    """Values of sum_i coeffs_i e_i on the grid of C."""
    return np.asarray(coeffs) @ C.eigenfunctions


def cm_inner(f, g, C):
    """
    Cameron-Martin inner product sum_i <f, e_i><g, e_i> / c_i over the retained eigenpairs.

    Args:
        :f (GridFunction): First function (or batch)
        :g (GridFunction): Second function (or batch)
        :C (CovOperator): Operator defining the Cameron-Martin space

    Returns:
        :inner (float or np.ndarray): The Cameron-Martin inner product
    """
    check_same_grid(f, g)
    keep = C.retained
    if not np.any(keep):
        raise SingularOperatorError("covariance operator has no retained eigenvalues")
    a = basis_coefficients(f, C)[..., keep]
    b = basis_coefficients(g, C)[..., keep]
    return _scalar(np.sum(a * b / C.eigenvalues[keep], axis=-1))


def inner(f, g, kind):
    """Inner product of the given kind (L2 or CameronMartin)."""
    if isinstance(kind, L2):
        return l2_inner(f, g)
    if isinstance(kind, CameronMartin):
        return cm_inner(f, g, kind.cov)
    raise NotImplementedError(f"Unknown inner product kind {kind!r}")


def norm(f, kind=L2()):
    return np.sqrt(inner(f, f, kind))


def project(f, C, d):
    """
    Orthogonal projection onto the span of the first d eigenfunctions of C.

    Args:
        :f (GridFunction): Function (or batch) to project
        :C (CovOperator): Operator whose eigenbasis is used
        :d (int): Number of leading eigenfunctions kept, 1 <= d <= D

    Returns:
        :proj (GridFunction): sum_{i <= d} <f, e_i> e_i
    """
    D = f.grid.n_points
    if int(d) != d or not 1 <= d <= D:
        raise DimensionError(f"projection rank d must lie in [1, {D}], got {d}")
    d = int(d)
    coeffs = basis_coefficients(f, C)[..., :d]
    return f.with_values(coeffs @ C.eigenfunctions[:d])
