"""
Trace-class covariance operators on the discretised L^2([0, 1]).

An operator is stored through its spectrum: eigenvalues c_i (descending, >= 0) and
eigenfunctions e_i that are orthonormal in the 1 / D weighted inner product. In grid
coordinates the operator acts as the matrix (1 / D) sum_i c_i e_i e_i^T and the
pointwise covariance (kernel) of N(0, C) is sum_i c_i e_i e_i^T.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import DimensionError, SingularOperatorError
from .function_space import GridFunction, basis_coefficients, check_same_grid

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-12


def as_generator(rng=None):
    """Turn a seed (or None, or an existing Generator) into a numpy Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, eq=False)
class CovOperator:
    """
    Spectral representation of a covariance operator.

    Args:
        :grid (Grid): Grid the operator acts on
        :eigenvalues (np.ndarray): D non-negative eigenvalues, sorted descending
        :eigenfunctions (np.ndarray): (D, D) array, row i holds the values of e_i
        :rank_tol (float, default=1e-12): Relative eigenvalue cutoff below which
            eigenpairs are dropped by inverse-type operations
        :kind (str, default='matrix'): Name of the generating kernel
        :params (dict): Parameters of the generating kernel
    """
    grid: object
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    rank_tol: float = DEFAULT_RANK_TOL
    kind: str = 'matrix'
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        D = self.grid.n_points
        c = np.asarray(self.eigenvalues, dtype=float)
        E = np.asarray(self.eigenfunctions, dtype=float)
        if c.shape != (D,) or E.shape != (D, D):
            raise DimensionError(
                f"spectrum shapes {c.shape}, {E.shape} do not match {D} grid points")
        if np.any(c < 0) or np.any(np.diff(c) > 0):
            raise ValueError("eigenvalues must be non-negative and sorted descending")
        gram = E @ E.T / D
        if not np.allclose(gram, np.eye(D), atol=1e-8):
            raise ValueError("eigenfunctions are not L2-orthonormal")
        object.__setattr__(self, 'eigenvalues', c)
        object.__setattr__(self, 'eigenfunctions', E)

    @property
    def trace(self):
        return float(np.sum(self.eigenvalues))

    @property
    def retained(self):
        """Mask of eigenpairs with c_i >= rank_tol * c_1."""
        top = self.eigenvalues[0]
        if top <= 0:
            return np.zeros_like(self.eigenvalues, dtype=bool)
        return self.eigenvalues >= self.rank_tol * top

    @property
    def n_retained(self):
        return int(np.sum(self.retained))

    @property
    def operator_matrix(self):
        """Matrix of the operator acting on grid values."""
        E = self.eigenfunctions
        return (E.T * self.eigenvalues) @ E / self.grid.n_points

    @property
    def kernel_matrix(self):
        """Pointwise covariance k(t_i, t_j) = sum_k c_k e_k(t_i) e_k(t_j)."""
        E = self.eigenfunctions
        return (E.T * self.eigenvalues) @ E

    def scaled(self, alpha):
        """The operator alpha * C (same eigenfunctions)."""
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        params = dict(self.params)
        params['scale'] = params.get('scale', 1.0) * alpha
        return CovOperator(self.grid, alpha * self.eigenvalues, self.eigenfunctions,
                           self.rank_tol, self.kind, params)


def from_operator_matrix(grid, M, rank_tol=DEFAULT_RANK_TOL, kind='matrix', params=None):
    """
    Eigendecompose a symmetric operator matrix (acting on grid values).

    Negative eigenvalues from round-off are clamped to 0.

    Args:
        :grid (Grid): Grid of the operator
        :M (np.ndarray): (D, D) operator matrix
        :rank_tol (float, default=1e-12): Relative cutoff for inverse-type operations
        :kind (str, default='matrix'): Name recorded in checkpoints
        :params (dict, default=None): Parameters recorded in checkpoints

    Returns:
        :C (CovOperator): The operator in spectral form
    """
    D = grid.n_points
    M = np.asarray(M, dtype=float)
    if M.shape != (D, D):
        raise DimensionError(f"operator matrix of shape {M.shape} on a grid of {D} points")
    M = 0.5 * (M + M.T)
    vals, vecs = scipy.linalg.eigh(M)
    vals = np.clip(vals[::-1], 0.0, None)
    vecs = vecs[:, ::-1]
    return CovOperator(grid, vals, np.sqrt(D) * vecs.T, rank_tol, kind, params or {})


def from_kernel_matrix(grid, K, **kwargs):
    """Operator whose pointwise covariance is K, assembled with 1 / D quadrature weights."""
    return from_operator_matrix(grid, np.asarray(K, dtype=float) / grid.n_points, **kwargs)


def rbf_cov(grid, lengthscale, variance=1.0, rank_tol=DEFAULT_RANK_TOL):
    """
    Squared-exponential covariance k(s, t) = variance * exp(-(s - t)^2 / (2 lengthscale^2)).

    Args:
        :grid (Grid): Grid of the operator
        :lengthscale (float): Kernel length scale, > 0
        :variance (float, default=1.0): Pointwise variance k(t, t), > 0

    Returns:
        :C (CovOperator): The RBF covariance operator
    """
    if lengthscale <= 0 or variance <= 0:
        raise ValueError("lengthscale and variance must be positive")
    t = grid.points
    K = variance * np.exp(-0.5 * ((t[:, None] - t[None, :]) / lengthscale) ** 2)
    C = from_kernel_matrix(grid, K, rank_tol=rank_tol, kind='rbf',
                           params={'lengthscale': lengthscale, 'variance': variance})
    logger.debug("rbf spectrum on %d points: c_1 = %.3e, retained %d",
                 grid.n_points, C.eigenvalues[0], C.n_retained)
    return C


def brownian_cov(grid, rank_tol=DEFAULT_RANK_TOL):
    """Covariance min(s, t) of a standard Brownian motion started at 0."""
    t = grid.points
    K = np.minimum(t[:, None], t[None, :])
    return from_kernel_matrix(grid, K, rank_tol=rank_tol, kind='brownian', params={})


def identity_cov(grid, eigenvalue=1.0, rank_tol=DEFAULT_RANK_TOL):
    """
    The discrete identity eigenvalue * Id, i.e. white noise of the classical formulation.
    """
    if eigenvalue <= 0:
        raise ValueError("eigenvalue must be positive")
    D = grid.n_points
    return CovOperator(grid, np.full(D, float(eigenvalue)), np.sqrt(D) * np.eye(D),
                       rank_tol, 'identity', {'eigenvalue': eigenvalue})


def empirical_cov(samples, eps=0.0, rank_tol=DEFAULT_RANK_TOL):
    """
    Centred empirical covariance of a set of functions, shifted by eps * Id.

    When there are fewer samples than grid points the spectrum is computed from the
    N x N Gram matrix of the centred snapshots and completed with an orthonormal basis
    of their orthogonal complement.

    Args:
        :samples (GridFunction or list of GridFunction): At least two functions
        :eps (float, default=0.0): Spectral shift added to every eigenvalue

    Returns:
        :C (CovOperator): (1 / N) sum (x - xbar) (x) (x - xbar) + eps * Id
    """
    if not isinstance(samples, GridFunction):
        samples = GridFunction.stack(samples)
    if not samples.is_batch or len(samples) < 2:
        raise ValueError("empirical_cov needs at least 2 samples")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    grid = samples.grid
    D = grid.n_points
    X = samples.values - samples.values.mean(axis=0)
    N = X.shape[0]
    params = {'eps': eps, 'n_samples': N}

    if N >= D:
        C = from_operator_matrix(grid, X.T @ X / (N * D), rank_tol=rank_tol,
                                 kind='empirical', params=params)
        vals, E = C.eigenvalues, C.eigenfunctions
    else:
        gram = X @ X.T / (N * D)
        g_vals, g_vecs = scipy.linalg.eigh(0.5 * (gram + gram.T))
        g_vals, g_vecs = g_vals[::-1], g_vecs[:, ::-1]
        keep = g_vals > 1e-13 * max(g_vals[0], 1e-300)
        U = X.T @ g_vecs[:, keep]
        U /= np.linalg.norm(U, axis=0)
        complement = scipy.linalg.null_space(U.T) if U.shape[1] > 0 else np.eye(D)
        vecs = np.hstack([U, complement])
        vals = np.concatenate([g_vals[keep], np.zeros(complement.shape[1])])
        E = np.sqrt(D) * vecs.T

    logger.info("empirical covariance from %d samples: trace %.4e (eps = %g)",
                N, np.sum(vals) + D * eps, eps)
    return CovOperator(grid, vals + eps, E, rank_tol, 'empirical', params)


def build_cov(kind, grid, params):
    """Re-derive an operator from its kind and parameters."""
    params = dict(params)
    scale = params.pop('scale', 1.0)
    if kind == 'rbf':
        C = rbf_cov(grid, params['lengthscale'], params.get('variance', 1.0))
    elif kind == 'brownian':
        C = brownian_cov(grid)
    elif kind == 'identity':
        C = identity_cov(grid, params.get('eigenvalue', 1.0))
    else:
        raise NotImplementedError(f"Operator kind '{kind}' cannot be re-derived from parameters")
    return C if scale == 1.0 else C.scaled(scale)


def _spectral_apply(C, f, phi):
    coeffs = basis_coefficients(f, C)
    return f.with_values((coeffs * phi) @ C.eigenfunctions)


def apply(C, f):
    """C f = sum_i c_i <f, e_i> e_i."""
    return _spectral_apply(C, f, C.eigenvalues)


def apply_sqrt(C, f):
    """C^{1/2} f = sum_i sqrt(c_i) <f, e_i> e_i."""
    return _spectral_apply(C, f, np.sqrt(C.eigenvalues))


def apply_inv(C, f):
    """
    Regularised inverse: sum_i <f, e_i> e_i / c_i over the retained eigenpairs.

    Components of f outside the retained span are discarded.
    """
    keep = C.retained
    if not np.any(keep):
        raise SingularOperatorError("covariance operator has no retained eigenvalues")
    phi = np.zeros_like(C.eigenvalues)
    phi[keep] = 1.0 / C.eigenvalues[keep]
    if not np.all(keep):
        logger.debug("apply_inv: dropping %d of %d eigenpairs below rank_tol",
                     np.sum(~keep), len(keep))
    return _spectral_apply(C, f, phi)


def sample_gaussian(C, mean=None, rng=None, n=None):
    """
    Karhunen-Loeve sampling X = mean + sum_i sqrt(c_i) xi_i e_i with xi_i iid N(0, 1).

    Args:
        :C (CovOperator): Covariance operator
        :mean (GridFunction, default=None): Mean function, zero if None
        :rng (int or np.random.Generator, default=None): Seed or generator
        :n (int, default=None): Number of draws; a single function if None

    Returns:
        :X (GridFunction): One draw, or a batch of n draws
    """
    rng = as_generator(rng)
    D = C.grid.n_points
    shape = (D,) if n is None else (n, D)
    xi = rng.standard_normal(shape)
    values = (xi * np.sqrt(C.eigenvalues)) @ C.eigenfunctions
    if mean is not None:
        if mean.grid != C.grid:
            raise DimensionError("mean and covariance live on different grids")
        values = values + mean.values
    return GridFunction(C.grid, values)


def gaussian_logpdf(x, mean, C):
    """
    Log-density of the grid values of x under N(mean, C), in grid coordinates.

    The density is taken with respect to Lebesgue measure on R^D with covariance
    matrix C.kernel_matrix; degenerate directions are handled as a pseudo-density.
    """
    check_same_grid(x, mean)
    if x.grid != C.grid:
        raise DimensionError("function and operator live on different grids")
    dist = scipy.stats.multivariate_normal(mean.values, C.kernel_matrix, allow_singular=True)
    return dist.logpdf(x.values)


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """
    Gaussian measure N(mean, cov) on the discretised L^2([0, 1]).

    Args:
        :mean (GridFunction): Mean function
        :cov (CovOperator): Covariance operator on the same grid
    """
    mean: GridFunction
    cov: CovOperator

    def __post_init__(self):
        if self.mean.is_batch:
            raise DimensionError("a Gaussian measure has a single mean function")
        if self.mean.grid != self.cov.grid:
            raise DimensionError("mean and covariance live on different grids")

    @property
    def grid(self):
        return self.cov.grid

    def sample(self, rng=None, n=None):
        return sample_gaussian(self.cov, self.mean, rng, n)

    def logpdf(self, x):
        return gaussian_logpdf(x, self.mean, self.cov)


def representation_in_basis(S, C):
    """Matrix R_ij = <e_i, S e_j> of S in the eigenbasis of C."""
    if S.grid != C.grid:
        raise DimensionError("operators live on different grids")
    E = C.eigenfunctions
    return E @ S.operator_matrix @ E.T / C.grid.n_points


def commuting_diagonal(S, C, tol=1e-10):
    """
    Diagonal of S in the eigenbasis of C if S and C commute, otherwise None.
    """
    if S.eigenfunctions is C.eigenfunctions:
        return S.eigenvalues.copy()
    R = representation_in_basis(S, C)
    diag = np.diag(R).copy()
    off = R - np.diag(diag)
    if np.max(np.abs(off)) <= tol * max(np.max(np.abs(R)), 1e-300):
        return diag
    return None


def combine(S, C, a, b, rank_tol=DEFAULT_RANK_TOL):
    """
    The operator a * S + b * C, kept in the eigenbasis of C when the two commute.
    """
    diag = commuting_diagonal(S, C)
    if diag is None:
        return from_operator_matrix(C.grid, a * S.operator_matrix + b * C.operator_matrix,
                                    rank_tol=rank_tol)
    vals = np.clip(a * diag + b * C.eigenvalues, 0.0, None)
    order = np.argsort(-vals, kind='stable')
    return CovOperator(C.grid, vals[order], C.eigenfunctions[order], rank_tol)
