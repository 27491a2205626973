"""
Evaluation metrics: Bures-Wasserstein distance, sliced Wasserstein-2, spectra and the
quadratic-variation roughness diagnostic.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .covariance import GaussianMeasure, as_generator, empirical_cov
from .errors import DimensionError
from .function_space import GridFunction, check_same_grid

logger = logging.getLogger(__name__)


def _sqrt_matrix(C):
    E = C.eigenfunctions
    return (E.T * np.sqrt(C.eigenvalues)) @ E / C.grid.n_points


def w2_gaussian(a, b):
    """
    Wasserstein-2 distance between two Gaussian measures (Bures formula), in L^2:

        W2^2 = ||m_a - m_b||^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})

    Args:
        :a (GaussianMeasure): First measure
        :b (GaussianMeasure): Second measure on the same grid

    Returns:
        :w2 (float): The distance
    """
    check_same_grid(a.mean, b.mean)
    D = a.grid.n_points
    diff = a.mean.values - b.mean.values
    root = _sqrt_matrix(a.cov)
    cross = root @ b.cov.operator_matrix @ root
    vals = scipy.linalg.eigvalsh(0.5 * (cross + cross.T))
    bures = a.cov.trace + b.cov.trace - 2.0 * np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    return float(np.sqrt(max(diff @ diff / D + bures, 0.0)))


def empirical_gaussian(samples, eps=0.0):
    """Gaussian measure with the sample mean and centred sample covariance."""
    if not samples.is_batch or len(samples) < 2:
        raise ValueError("need at least 2 samples")
    mean = GridFunction(samples.grid, samples.values.mean(axis=0))
    return GaussianMeasure(mean, empirical_cov(samples, eps))


def w2_1d(a, b):
    """
    Exact squared W2 between two empirical measures on the line (quantile coupling).
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = len(a), len(b)
    if n == m:
        return float(np.mean((a - b) ** 2))
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - 0.5 * widths
    qa = a[np.minimum((mid * n).astype(int), n - 1)]
    qb = b[np.minimum((mid * m).astype(int), m - 1)]
    return float(np.sum(widths * (qa - qb) ** 2))


@dataclass
class SlicedW2:
    value: float
    stderr: float
    n_proj: int

    def to_dict(self):
        return asdict(self)


def sliced_w2(xs, ys, n_proj=128, rng=None):
    """
    Sliced Wasserstein-2 distance between two sample sets.

    Directions are drawn from N(0, Id) and normalised to unit L^2 norm; each slice is
    compared with the exact one-dimensional W2. The standard error reflects the
    randomness of the directions.

    Args:
        :xs (GridFunction): First batch of functions
        :ys (GridFunction): Second batch on the same grid
        :n_proj (int, default=128): Number of directions
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :result (SlicedW2): Distance and standard error
    """
    check_same_grid(xs, ys)
    X = np.atleast_2d(xs.values)
    Y = np.atleast_2d(ys.values)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("sliced_w2 needs two non-empty sample sets")
    rng = as_generator(rng)
    D = xs.grid.n_points
    theta = rng.standard_normal((n_proj, D))
    theta /= np.sqrt(np.sum(theta ** 2, axis=1, keepdims=True) / D)
    px = X @ theta.T / D
    py = Y @ theta.T / D
    per_slice = np.array([w2_1d(px[:, j], py[:, j]) for j in range(n_proj)])
    value = float(np.sqrt(np.mean(per_slice)))
    if value > 0 and n_proj > 1:
        stderr = float(np.std(per_slice, ddof=1) / np.sqrt(n_proj) / (2.0 * value))
    else:
        stderr = 0.0
    return SlicedW2(value, stderr, n_proj)


def quadratic_variation(f):
    """
    Discrete quadratic variation sum_i (f_{i+1} - f_i)^2, one value per row.

    Args:
        :f (GridFunction): Function or batch, on a grid of at least 2 points

    Returns:
        :qv (float or np.ndarray): The quadratic variation
    """
    if f.grid.n_points < 2:
        raise DimensionError("quadratic variation needs at least 2 grid points")
    qv = np.sum(np.diff(f.values, axis=-1) ** 2, axis=-1)
    return float(qv) if np.ndim(qv) == 0 else qv


def spectrum_compare(samples, C_target, k):
    """
    Top-k eigenvalues of the sample covariance against those of C_target.

    Returns:
        :report (dict): 'k', 'empirical', 'target', 'rel_error', 'max_rel_error'
    """
    D = C_target.grid.n_points
    if not 0 <= k <= D:
        raise DimensionError(f"k must lie in [0, {D}], got {k}")
    if k == 0:
        return {'k': 0, 'empirical': [], 'target': [], 'rel_error': [], 'max_rel_error': 0.0}
    emp = empirical_cov(samples).eigenvalues[:k]
    target = C_target.eigenvalues[:k]
    rel = np.abs(emp - target) / np.maximum(target, np.finfo(float).tiny)
    return {'k': int(k), 'empirical': emp.tolist(), 'target': target.tolist(),
            'rel_error': rel.tolist(), 'max_rel_error': float(np.max(rel))}


def qv_location_test(qv_a, qv_b, alpha=0.05):
    """
    Welch two-sample t-test on quadratic-variation values.

    Returns:
        :result (dict): 'statistic', 'pvalue', 'reject' (at level alpha), 'mean_a', 'mean_b'
    """
    res = scipy.stats.ttest_ind(np.asarray(qv_a), np.asarray(qv_b), equal_var=False)
    return {'statistic': float(res.statistic), 'pvalue': float(res.pvalue),
            'reject': bool(res.pvalue < alpha), 'mean_a': float(np.mean(qv_a)),
            'mean_b': float(np.mean(qv_b))}


def overlap_coefficient(a, b, bins=50):
    """
    Overlap sum_j min(p_j, q_j) of two histograms on a shared binning, in [0, 1].
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return 0.0
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 1.0
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(a, edges)[0] / len(a)
    q = np.histogram(b, edges)[0] / len(b)
    return float(np.sum(np.minimum(p, q)))


def metric_row(metric, value, stderr=None, config_hash=None):
    """One JSON row {metric, value, stderr, config_hash}."""
    return {'metric': metric, 'value': value, 'stderr': stderr, 'config_hash': config_hash}
