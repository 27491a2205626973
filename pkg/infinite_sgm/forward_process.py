"""
The Ornstein-Uhlenbeck noising process dX = -X / 2 dt + sqrt(C) dW.

Its transition kernel is N(exp(-t / 2) x0, (1 - exp(-t)) C), so noised samples are drawn
exactly, without time stepping.
"""
from dataclasses import dataclass

import numpy as np

from .covariance import GaussianMeasure, as_generator, combine, sample_gaussian
from .errors import DimensionError
from .function_space import GridFunction

DEFAULT_T_MIN = 1e-3
DEFAULT_T_MAX = 10.0


@dataclass(frozen=True, eq=False)
class NoisingPair:
    """
    A clean function, its noised version and the noise realisation.

    Satisfies xt = exp(-t / 2) x0 + sqrt(1 - exp(-t)) xi. For a batch, t holds one time
    per row.

    Args:
        :t (float or np.ndarray): Diffusion time(s)
        :x0 (GridFunction): Clean function(s)
        :xt (GridFunction): Noised function(s)
        :xi (GridFunction): N(0, C) noise realisation(s)
    """
    t: object
    x0: GridFunction
    xt: GridFunction
    xi: GridFunction

    @property
    def noise_scale(self):
        return np.sqrt(-np.expm1(-np.asarray(self.t, dtype=float)))


def _column(t, values):
    t = np.asarray(t, dtype=float)
    return t[:, None] if t.ndim == 1 and values.ndim == 2 else t


def transition_sample(x0, t, C, rng=None):
    """
    Draw X_t | X_0 = x0 from N(exp(-t / 2) x0, (1 - exp(-t)) C).

    Args:
        :x0 (GridFunction): Initial function, or a batch of them
        :t (float or np.ndarray): Time, or one time per batch row, >= 0
        :C (CovOperator): Noise covariance
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :pair (NoisingPair): The noised sample together with its noise
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    if x0.grid != C.grid:
        raise DimensionError("data and noise covariance live on different grids")
    rng = as_generator(rng)
    n = len(x0) if x0.is_batch else None
    xi = sample_gaussian(C, rng=rng, n=n)
    tt = _column(t, x0.values)
    xt = np.exp(-0.5 * tt) * x0.values + np.sqrt(-np.expm1(-tt)) * xi.values
    return NoisingPair(t, x0, x0.with_values(xt), xi)


def marginal_gaussian(m0, S0, t, C):
    """
    Law of X_t when X_0 ~ N(m0, S0): mean exp(-t / 2) m0, covariance
    exp(-t) S0 + (1 - exp(-t)) C.

    Args:
        :m0 (GridFunction): Initial mean
        :S0 (CovOperator): Initial covariance
        :t (float): Time, >= 0
        :C (CovOperator): Noise covariance

    Returns:
        :p_t (GaussianMeasure): The marginal law
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if not (m0.grid == S0.grid == C.grid):
        raise DimensionError("mean and covariances live on different grids")
    if t == 0:
        return GaussianMeasure(m0, S0)
    decay = np.exp(-t)
    return GaussianMeasure(m0.with_values(np.exp(-0.5 * t) * m0.values),
                           combine(S0, C, decay, -np.expm1(-t)))


def sample_times(n, t_min=DEFAULT_T_MIN, T=DEFAULT_T_MAX, rng=None, time_grid=None):
    """
    Training times: uniform on [t_min, T], or uniform over a discrete time grid.
    """
    rng = as_generator(rng)
    if time_grid is not None:
        time_grid = np.asarray(time_grid, dtype=float)
        return time_grid[rng.integers(0, len(time_grid), size=n)]
    return t_min + (T - t_min) * rng.random(n)


def noising_batch(data, C, t_min=DEFAULT_T_MIN, T=DEFAULT_T_MAX, rng=None, time_grid=None):
    """
    Noise every function of a batch at an independently drawn time.

    Args:
        :data (GridFunction): Batch of clean functions
        :C (CovOperator): Noise covariance
        :t_min (float, default=1e-3): Smallest time
        :T (float, default=10): Largest time
        :rng (int or np.random.Generator, default=None): Seed or generator
        :time_grid (np.ndarray, default=None): Discrete times to draw from instead

    Returns:
        :pairs (NoisingPair): Batched pairs with one time per row
    """
    rng = as_generator(rng)
    t = sample_times(len(data), t_min, T, rng, time_grid)
    return transition_sample(data, t, C, rng)
