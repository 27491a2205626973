"""
Conditional sampling for linear observations y = A x_0 + noise.

Each reverse step mixes the state with its projection onto the observation hyperplane,
x <- lam x + (1 - lam) proj(x), where the projection is orthogonal either in L^2 (H) or in
the Cameron-Martin norm of a covariance (U). Observation matrices act on grid values.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .covariance import CovOperator, GaussianMeasure, from_kernel_matrix
from .errors import DimensionError, SingularOperatorError
from .io import read_json
from .reverse_sampler import sample

logger = logging.getLogger(__name__)

PROJECTIONS = ('H', 'U')


@dataclass(frozen=True, eq=False)
class ObservationOp:
    """
    Linear observation y = A x + xi with xi ~ N(0, noise_cov).

    Args:
        :A (np.ndarray): (d, D) matrix acting on grid values, full row rank
        :y (np.ndarray): (d,) observed values
        :noise_cov (np.ndarray, default=None): (d, d) noise covariance, zero if None
    """
    A: np.ndarray
    y: np.ndarray
    noise_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        d, D = A.shape
        if d > D:
            raise DimensionError(f"{d} observations of a {D}-point function")
        if y.shape != (d,):
            raise DimensionError(f"y has shape {y.shape}, expected ({d},)")
        noise = np.zeros((d, d)) if self.noise_cov is None else np.atleast_2d(
            np.asarray(self.noise_cov, dtype=float))
        if noise.shape != (d, d) or not np.allclose(noise, noise.T):
            raise ValueError("noise_cov must be a symmetric (d, d) matrix")
        if np.any(np.linalg.eigvalsh(noise) < -1e-12 * max(1.0, np.max(np.abs(noise)))):
            raise ValueError("noise_cov must be positive semi-definite")
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise SingularOperatorError("observation matrix A is rank deficient")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'noise_cov', noise)

    @property
    def n_obs(self):
        return self.A.shape[0]

    @property
    def n_points(self):
        return self.A.shape[1]

    @property
    def is_noiseless(self):
        return not np.any(self.noise_cov)

    def residual(self, x):
        """y - A x for every row of x."""
        return self.y - x.values @ self.A.T


@dataclass(frozen=True, eq=False)
class GuidanceConfig:
    """
    Args:
        :projection (str, default='U'): 'H' (L^2) or 'U' (Cameron-Martin)
        :lam (float, default=0.2): Mixing weight of the current state, in [0, 1]
        :apply_every (int, default=1): Mix at every apply_every-th knot
        :cov (CovOperator, default=None): Operator of the U-projection; the sampler's C if None
        :final_projection (bool, default=True): Project the output fully onto the
            observation set when guidance is active (lam < 1)
    """
    projection: str = 'U'
    lam: float = 0.2
    apply_every: int = 1
    cov: Optional[CovOperator] = None
    final_projection: bool = True

    def __post_init__(self):
        if self.projection not in PROJECTIONS:
            raise NotImplementedError(f"Unknown projection '{self.projection}'")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if int(self.apply_every) != self.apply_every or self.apply_every < 1:
            raise ValueError("apply_every must be a positive integer")

    def to_dict(self):
        return {'projection': self.projection, 'lam': self.lam,
                'apply_every': self.apply_every, 'final_projection': self.final_projection}


def eval_row(grid, t):
    """Observation row evaluating a function at the grid point nearest to t."""
    row = np.zeros(grid.n_points)
    row[grid.index_of(t)] = 1.0
    return row


def endpoint_observation(grid, start=-1.0, end=1.0, noise_std=0.1):
    """
    Observe a path at its first and last grid points, (x(t_1), x(1)) = (start, end).
    """
    A = np.stack([eval_row(grid, grid.points[0]), eval_row(grid, 1.0)])
    return ObservationOp(A, [start, end], noise_std ** 2 * np.eye(2))


def parse_observation(spec, grid):
    """
    Build an ObservationOp from {rows: [{kind: 'eval', at: t} | {kind: 'dense', coeffs: [...]}],
    y: [...], noise_std: sigma}.
    """
    rows = []
    for row in spec['rows']:
        if row['kind'] == 'eval':
            rows.append(eval_row(grid, float(row['at'])))
        elif row['kind'] == 'dense':
            coeffs = np.asarray(row['coeffs'], dtype=float)
            if coeffs.shape != (grid.n_points,):
                raise DimensionError(f"dense row of length {len(coeffs)} on a "
                                     f"{grid.n_points}-point grid")
            rows.append(coeffs)
        else:
            raise NotImplementedError(f"Unknown observation row kind '{row['kind']}'")
    sigma = float(spec.get('noise_std', 0.0))
    return ObservationOp(np.array(rows), spec['y'], sigma ** 2 * np.eye(len(rows)))


def load_observation(path, grid):
    return parse_observation(read_json(path), grid)


def _check(x, obs):
    if x.grid.n_points != obs.n_points:
        raise DimensionError(
            f"observation acts on {obs.n_points} points, function has {x.grid.n_points}")


def _kernel_projection(x, obs, K):
    AK = obs.A @ K
    S = AK @ obs.A.T + obs.noise_cov
    try:
        w = scipy.linalg.solve(S, np.atleast_2d(obs.residual(x)).T, assume_a='sym')
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise SingularOperatorError(f"innovation matrix A K A^T is singular: {err}") from err
    if not np.all(np.isfinite(w)):
        raise SingularOperatorError("innovation matrix A K A^T is singular")
    correction = w.T @ AK
    return x.with_values(x.values + (correction if x.is_batch else correction[0]))


def h_projection(x, obs):
    """
    Closest point of {A x' = y} in L^2: x + A^T (A A^T)^{-1} (y - A x).

    With noisy observations the solve is relaxed to (A A^T + noise_cov / D).

    Args:
        :x (GridFunction): Function (or batch) to project
        :obs (ObservationOp): Observation

    Returns:
        :x_hat (GridFunction): The projected function(s)
    """
    _check(x, obs)
    return _kernel_projection(x, obs, x.grid.n_points * np.eye(x.grid.n_points))


def u_projection(x, obs, C):
    """
    Closest point of {A x' = y} in the Cameron-Martin norm of C:
    x + K A^T (A K A^T + noise_cov)^{-1} (y - A x), with K the kernel matrix of C.

    Args:
        :x (GridFunction): Function (or batch) to project
        :obs (ObservationOp): Observation
        :C (CovOperator): Operator defining the norm

    Returns:
        :x_hat (GridFunction): The projected function(s)
    """
    _check(x, obs)
    if x.grid != C.grid:
        raise DimensionError("function and operator live on different grids")
    return _kernel_projection(x, obs, C.kernel_matrix)


def projector(obs, g, C):
    """The projection selected by a GuidanceConfig, as a function of x."""
    if g.projection == 'H':
        return lambda x: h_projection(x, obs)
    cov = g.cov if g.cov is not None else C
    K = cov.kernel_matrix

    def project_u(x):
        _check(x, obs)
        return _kernel_projection(x, obs, K)
    return project_u


def guided_sample(drift, C, sched, obs, g, n_samples, rng=None, progress=False):
    """
    Reverse sampling with the state mixed towards the observation set before each step.

    At every apply_every-th knot, x <- lam x + (1 - lam) proj(x), then the integrator
    step is taken. With lam = 1 the trajectories equal those of unguided sampling.

    Args:
        :drift (ScoreFn): Reverse drift
        :C (CovOperator): Noise covariance
        :sched (SDESchedule): Schedule
        :obs (ObservationOp): Observation to condition on
        :g (GuidanceConfig): Projection kind and mixing weight
        :n_samples (int): Number of trajectories
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :samples (GridFunction): Guided samples
    """
    if g.lam == 1.0:
        return sample(drift, C, sched, n_samples, rng, progress)
    proj = projector(obs, g, C)

    def guide(k, y, final):
        if final:
            return proj(y) if g.final_projection else y
        if k % g.apply_every:
            return y
        return y.with_values(g.lam * y.values + (1.0 - g.lam) * proj(y).values)

    out = sample(drift, C, sched, n_samples, rng, progress, guide=guide)
    if len(out):
        report = feasibility(out, obs)
        logger.info("guided sampling (%s, lam=%g): max residual %.3e, tolerance %.3e",
                    g.projection, g.lam, report['max_residual'], report['tol'])
    return out


def feasibility(samples, obs, rel_tol=0.05):
    """
    Residual norms ||A x - y|| of the samples against the tolerance rel_tol * ||y||.
    """
    res = np.linalg.norm(np.atleast_2d(obs.residual(samples)), axis=-1)
    tol = rel_tol * np.linalg.norm(obs.y)
    return {'max_residual': float(np.max(res)) if len(res) else 0.0,
            'mean_residual': float(np.mean(res)) if len(res) else 0.0,
            'tol': float(tol), 'fraction_within': float(np.mean(res <= tol)) if len(res) else 1.0}


def gaussian_posterior(prior, obs):
    """
    Exact posterior of a Gaussian prior under a linear-Gaussian observation.

    m_post = m + K A^T S^{-1} (y - A m), K_post = K - K A^T S^{-1} A K, S = A K A^T + noise_cov,
    with K the kernel matrix of the prior covariance.

    Args:
        :prior (GaussianMeasure): Prior law
        :obs (ObservationOp): Observation

    Returns:
        :posterior (GaussianMeasure): The posterior law
    """
    _check(prior.mean, obs)
    K = prior.cov.kernel_matrix
    AK = obs.A @ K
    S = AK @ obs.A.T + obs.noise_cov
    if np.linalg.matrix_rank(S) < obs.n_obs:
        raise SingularOperatorError("innovation matrix A K A^T + noise_cov is singular")
    gain = scipy.linalg.solve(S, AK, assume_a='sym')
    mean = prior.mean.values + obs.residual(prior.mean) @ gain
    K_post = K - AK.T @ gain
    cov = from_kernel_matrix(prior.grid, 0.5 * (K_post + K_post.T), kind='posterior')
    return GaussianMeasure(prior.mean.with_values(mean), cov)


def mean_error(samples, reference):
    """Relative L^2 error of the sample mean against a reference function."""
    diff = np.mean(samples.values, axis=0) - reference.values
    return float(np.linalg.norm(diff) / np.linalg.norm(reference.values))


__all__ = ['ObservationOp', 'GuidanceConfig', 'eval_row', 'endpoint_observation',
           'parse_observation', 'load_observation', 'h_projection', 'u_projection',
           'guided_sample', 'feasibility', 'gaussian_posterior', 'mean_error']
