"""
Training-data generators: RBF Gaussian-process draws and double-well Langevin paths.
"""
import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.stats

from .covariance import as_generator, rbf_cov, sample_gaussian
from .errors import NumericalError
from .function_space import Grid, GridFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DoubleWellSpec:
    """
    Langevin dynamics dX = -V'(X) dt + diffusion dB with V(x) = a (x - 1)^2 (x + 1)^2.

    Args:
        :a (float, default=2.5): Barrier height V(0)
        :diffusion (float, default=sqrt(2)): Noise amplitude
        :substeps (int, default=10): Euler-Maruyama steps per grid cell
    """
    a: float = 2.5
    diffusion: float = float(np.sqrt(2.0))
    substeps: int = 10

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if self.diffusion < 0:
            raise ValueError("diffusion must be non-negative")

    def to_dict(self):
        return asdict(self)


def double_well_potential(x, a=2.5):
    """V(x) = a (x^2 - 1)^2."""
    x = np.asarray(x, dtype=float)
    return a * (x ** 2 - 1.0) ** 2


def double_well_drift(x, a=2.5):
    """-V'(x) = -4 a x (x^2 - 1), i.e. -10 x^3 + 10 x for a = 5/2."""
    x = np.asarray(x, dtype=float)
    return -4.0 * a * x * (x ** 2 - 1.0)


def gen_gp_rbf(n, D, lengthscale=0.05, rng=None, variance=1.0):
    """
    Draw n functions from N(0, C_rbf) by Karhunen-Loeve sampling.

    Args:
        :n (int): Number of functions, >= 1
        :D (int): Grid size
        :lengthscale (float, default=0.05): Kernel length scale
        :rng (int or np.random.Generator, default=None): Seed or generator
        :variance (float, default=1.0): Pointwise variance

    Returns:
        :data (GridFunction): Batch of n functions
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    C = rbf_cov(Grid(D), lengthscale, variance)
    return sample_gaussian(C, rng=rng, n=n)


MAX_PROPOSALS = 1 << 22


def _proposal(scale=0.3):
    return [scipy.stats.norm(-1.0, scale), scipy.stats.norm(1.0, scale)]


def stationary_double_well_init(n, a=2.5, rng=None, scale=0.3):
    """
    Draw n values from the density proportional to exp(-V) by rejection sampling.

    The proposal is the equal mixture of N(-1, scale^2) and N(1, scale^2); the envelope
    constant is the largest density ratio on a fine grid, inflated by 5%. The grid reaches
    past the point where the quartic potential outgrows the proposal tails.

    Args:
        :n (int): Number of draws
        :a (float, default=2.5): Barrier height
        :rng (int or np.random.Generator, default=None): Seed or generator
        :scale (float, default=0.3): Proposal component standard deviation

    Returns:
        :x (np.ndarray): Array of shape (n,)
    """
    if a <= 0 or scale <= 0:
        raise ValueError("barrier height and proposal scale must be positive")
    rng = as_generator(rng)
    comps = _proposal(scale)

    def proposal_pdf(x):
        return 0.5 * (comps[0].pdf(x) + comps[1].pdf(x))

    def log_ratio(x):
        log_q = np.logaddexp(comps[0].logpdf(x), comps[1].logpdf(x)) - np.log(2.0)
        return -double_well_potential(x, a) - log_q

    # ratio is decreasing once a (|x| + 1)^2 exceeds 1 / (2 scale^2)
    reach = max(4.0, 2.0 + 2.0 / (scale * np.sqrt(2.0 * a)))
    xs = np.linspace(-reach, reach, 16001)
    bound = 1.05 * np.exp(np.max(log_ratio(xs)))
    out = np.empty(0)
    while len(out) < n:
        m = min(2 * max(1, int(np.ceil(bound))) * max(n - len(out), 16), MAX_PROPOSALS)
        signs = np.where(rng.random(m) < 0.5, -1.0, 1.0)
        prop = signs + scale * rng.standard_normal(m)
        accept = rng.random(m) * bound * proposal_pdf(prop) < np.exp(-double_well_potential(prop, a))
        out = np.concatenate([out, prop[accept]])
    return out[:n]


def gen_double_well_paths(n, D, spec=DoubleWellSpec(), init='stationary', rng=None):
    """
    Simulate n double-well paths on the grid (i + 1) / D by Euler-Maruyama.

    The step is (1 / D) / spec.substeps; the path starts at time 0 and is recorded at
    every grid point.

    Args:
        :n (int): Number of paths
        :D (int): Grid size
        :spec (DoubleWellSpec): Dynamics
        :init (str or float, default='stationary'): 'stationary' draws X(0) from
            exp(-V) / Z; a number starts every path there
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :paths (GridFunction): Batch of n paths
    """
    rng = as_generator(rng)
    if isinstance(init, str):
        if init != 'stationary':
            raise NotImplementedError(f"Unknown initialisation '{init}'")
        x = stationary_double_well_init(n, spec.a, rng)
    else:
        x = np.full(n, float(init))
    dt = 1.0 / (D * spec.substeps)
    noise_scale = spec.diffusion * np.sqrt(dt)
    values = np.empty((n, D))
    for i in range(D):
        for _ in range(spec.substeps):
            x = x + double_well_drift(x, spec.a) * dt + noise_scale * rng.standard_normal(n)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"double-well paths diverged before t = {(i + 1) / D}")
        values[:, i] = x
    return GridFunction(Grid(D), values)


def _in_band(x, band):
    lo, hi = (-np.inf, np.inf) if band is None else band
    lo = -np.inf if lo is None else lo
    hi = np.inf if hi is None else hi
    return (x > lo) & (x < hi)


def bridge_reference(paths, start_band=(-1.5, -0.5), end_band=(0.5, 1.5)):
    """
    Keep the paths whose first grid value lies in start_band and last in end_band.

    An unbounded side of a band is given as None; a band of None keeps everything.
    An empty result is returned as an empty batch with a warning.

    Args:
        :paths (GridFunction): Batch of paths
        :start_band (tuple, default=(-1.5, -0.5)): Open interval for X(t_1)
        :end_band (tuple, default=(0.5, 1.5)): Open interval for X(1)

    Returns:
        :reference (GridFunction): The retained paths (possibly zero rows)
    """
    keep = _in_band(paths.values[:, 0], start_band) & _in_band(paths.values[:, -1], end_band)
    count = int(np.sum(keep))
    if count == 0:
        warnings.warn("no path falls into both bands; increase the number of paths")
    logger.info("bridge reference: kept %d of %d paths", count, len(paths))
    return GridFunction(paths.grid, paths.values[keep])


def transition_fraction(paths, low=-0.5, high=0.5):
    """
    Fraction of paths that are below low at some grid time and above high afterwards.
    """
    below = paths.values < low
    above = paths.values > high
    first_below = np.where(below.any(axis=1), below.argmax(axis=1), paths.grid.n_points)
    idx = np.arange(paths.grid.n_points)[None, :]
    crossed = np.any(above & (idx > first_below[:, None]), axis=1)
    return float(np.mean(crossed))
