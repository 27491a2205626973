"""
Closed-form reverse drifts for Gaussian and Gaussian-mixture targets.

Sign convention: the reverse drift is

    s(t, x) = (exp(-t / 2) E[X_0 | X_t = x] - x) / (1 - exp(-t)) = C grad_H log p_t(x),

so that the stationary target N(0, C) gives s = -x and the reverse SDE
dY = Y / 2 dt + s(t, Y) dt + sqrt(C) dW leaves N(0, C) invariant. The relative drift is
s_nu(t, x) = s(t, x) + x, which vanishes identically at stationarity.
"""
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.special

from .covariance import GaussianMeasure, as_generator, gaussian_logpdf, sample_gaussian
from .errors import DimensionError, NumericalError, SingularOperatorError, UnreliableEstimateError
from .forward_process import marginal_gaussian, transition_sample
from .function_space import GridFunction, basis_coefficients

logger = logging.getLogger(__name__)

ABSOLUTE = 'absolute'
RELATIVE = 'relative'
PARAMETERIZATIONS = (ABSOLUTE, RELATIVE)
AFFINE_CACHE_BYTES = 1 << 28


@dataclass(frozen=True, eq=False)
class MixtureMeasure:
    """
    Finite Gaussian mixture sum_k w_k N(m_k, S_k).

    Args:
        :weights (np.ndarray): Positive weights summing to one
        :components (tuple of GaussianMeasure): Components sharing one grid
    """
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if len(comps) == 0 or w.shape != (len(comps),):
            raise ValueError("need one positive weight per component")
        if np.any(w <= 0) or abs(np.sum(w) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise DimensionError("mixture components live on different grids")
        object.__setattr__(self, 'weights', w)
        object.__setattr__(self, 'components', comps)

    @property
    def grid(self):
        return self.components[0].grid

    def sample(self, rng=None, n=None):
        rng = as_generator(rng)
        size = 1 if n is None else n
        labels = rng.choice(len(self.weights), size=size, p=self.weights)
        values = np.empty((size, self.grid.n_points))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if len(idx):
                values[idx] = sample_gaussian(comp.cov, comp.mean, rng, len(idx)).values
        return GridFunction(self.grid, values[0] if n is None else values)


@dataclass(frozen=True, eq=False)
class ScoreFn:
    """
    Uniform drift contract (t, x) -> value, evaluated on grid values.

    Args:
        :evaluate (callable): Maps (t, values of shape (..., D)) to drift values
        :parameterization (str, default='absolute'): 'absolute' (s) or 'relative' (s_nu)
        :provenance (str, default='oracle'): 'oracle' or 'learned'
        :diagnostics (dict): Counters filled in during evaluation
    """
    evaluate: Callable
    parameterization: str = ABSOLUTE
    provenance: str = 'oracle'
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise NotImplementedError(f"Unknown parameterization '{self.parameterization}'")

    def __call__(self, t, x):
        if isinstance(x, GridFunction):
            return x.with_values(self.evaluate(t, x.values))
        return self.evaluate(t, np.asarray(x, dtype=float))


def to_relative(s_fn):
    """Relative drift s_nu(t, x) = s(t, x) + x."""
    if s_fn.parameterization == RELATIVE:
        return s_fn
    return ScoreFn(lambda t, v: s_fn.evaluate(t, v) + v, RELATIVE, s_fn.provenance,
                   s_fn.diagnostics)


def to_absolute(s_fn):
    """Absolute drift s(t, x) = s_nu(t, x) - x."""
    if s_fn.parameterization == ABSOLUTE:
        return s_fn
    return ScoreFn(lambda t, v: s_fn.evaluate(t, v) - v, ABSOLUTE, s_fn.provenance,
                   s_fn.diagnostics)


def pseudo_inverse_matrix(S):
    """Operator matrix of the regularised inverse of S on its retained span."""
    keep = S.retained
    if not np.any(keep):
        raise SingularOperatorError("marginal covariance has no retained eigenvalues")
    E = S.eigenfunctions[keep]
    return (E.T / S.eigenvalues[keep]) @ E / S.grid.n_points


def gaussian_score_affine(target, C, t):
    """
    The Gaussian reverse drift as an affine map s(t, x) = A x + b on grid values.

    Args:
        :target (GaussianMeasure): Data distribution N(m0, S0)
        :C (CovOperator): Noise covariance
        :t (float): Time, >= 0

    Returns:
        :A (np.ndarray): (D, D) matrix -C S_t^+
        :b (np.ndarray): (D,) offset C S_t^+ m_t
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    p_t = marginal_gaussian(target.mean, target.cov, t, C)
    A = -C.operator_matrix @ pseudo_inverse_matrix(p_t.cov)
    b = -A @ p_t.mean.values
    return A, b


def gaussian_score(target, C, t, x):
    """
    Reverse drift s(t, x) = -C S_t^{-1} (x - m_t) for a Gaussian target.

    Args:
        :target (GaussianMeasure): Data distribution N(m0, S0)
        :C (CovOperator): Noise covariance
        :t (float): Time
        :x (GridFunction): Evaluation point (or batch)

    Returns:
        :s (GridFunction): The drift at x
    """
    A, b = gaussian_score_affine(target, C, t)
    return x.with_values(x.values @ A.T + b)


def _component_terms(target, C, t, values):
    grid = target.grid
    log_w = []
    scores = []
    for weight, comp in zip(target.weights, target.components):
        p_t = marginal_gaussian(comp.mean, comp.cov, t, C)
        A, b = gaussian_score_affine(comp, C, t)
        log_w.append(np.log(weight) + gaussian_logpdf(GridFunction(grid, values), p_t.mean,
                                                      p_t.cov))
        scores.append(values @ A.T + b)
    return np.array(log_w), np.array(scores)


def mixture_score(target, C, t, x):
    """
    Reverse drift of a Gaussian mixture: responsibility-weighted component drifts.

    Responsibilities are computed from component marginal log-likelihoods with
    log-sum-exp.

    Args:
        :target (MixtureMeasure): Data distribution
        :C (CovOperator): Noise covariance
        :t (float): Time
        :x (GridFunction): Evaluation point (or batch)

    Returns:
        :s (GridFunction): The drift at x
    """
    log_w, scores = _component_terms(target, C, t, x.values)
    log_norm = scipy.special.logsumexp(log_w, axis=0)
    if not np.all(np.isfinite(log_norm)):
        raise NumericalError(f"mixture responsibilities underflow at t = {t}")
    resp = np.exp(log_w - log_norm)
    return x.with_values(np.einsum('k...,k...d->...d', resp, scores))


def affine_cache_size(n_points):
    """Number of cached (D, D) affine maps that fits in AFFINE_CACHE_BYTES, within [16, 4096]."""
    return int(np.clip(AFFINE_CACHE_BYTES // (8 * n_points ** 2), 16, 4096))


def gaussian_score_fn(target, C):
    """ScoreFn wrapping gaussian_score, caching the affine map per time."""

    @lru_cache(maxsize=affine_cache_size(C.grid.n_points))
    def affine(t):
        return gaussian_score_affine(target, C, t)

    def evaluate(t, values):
        A, b = affine(float(t))
        return values @ A.T + b

    return ScoreFn(evaluate, ABSOLUTE, 'oracle')


def mixture_score_fn(target, C):
    """ScoreFn wrapping mixture_score."""
    return ScoreFn(lambda t, v: mixture_score(target, C, t, GridFunction(target.grid, v)).values,
                   ABSOLUTE, 'oracle')


def oracle_score_fn(target, C):
    """Closed-form ScoreFn for a Gaussian or Gaussian-mixture target."""
    if isinstance(target, GaussianMeasure):
        return gaussian_score_fn(target, C)
    if isinstance(target, MixtureMeasure):
        return mixture_score_fn(target, C)
    raise NotImplementedError(f"No closed-form drift for {type(target).__name__}")


def denoise_mean(s_fn, t, x):
    """
    Conditional mean E[X_0 | X_t = x] = exp(t / 2) (x + (1 - exp(-t)) s(t, x)).

    Args:
        :s_fn (ScoreFn): Drift in either parameterization
        :t (float): Time, > 0
        :x (GridFunction): Noised function (or batch)

    Returns:
        :x0_hat (GridFunction): The denoised estimate
    """
    s = to_absolute(s_fn)(t, x)
    return x.with_values(np.exp(0.5 * t) * (x.values - np.expm1(-t) * s.values))


@dataclass
class MartingaleReport:
    s: float
    t: float
    n_mc: int
    deviation: float
    stderr: float
    mean_ess: float = float('nan')
    min_ess: float = float('nan')

    def to_dict(self):
        return asdict(self)


def sample_target(target, rng=None, n=None):
    """Draw from a GaussianMeasure or MixtureMeasure."""
    return target.sample(rng, n)


def _whiten(values, C):
    keep = C.retained
    coeffs = basis_coefficients(GridFunction(C.grid, values), C)[..., keep]
    return coeffs / np.sqrt(C.eigenvalues[keep])


def martingale_check(target, C, s, t, n_mc, rng=None, n_eval=500, min_ess=50.0,
                     chunk_size=64):
    """
    Monte-Carlo check of the reverse-time martingale s(t, X_t) = exp((t - s) / 2) E[s(s, X_s) | X_t].

    Pairs (X_s, X_t) are drawn from the forward process. For n_eval of the X_t, the
    conditional expectation is estimated by self-normalised importance weighting of all
    X_s draws with the exact transition density p_{t|s}. The reported deviation is the
    mean squared residual minus its importance-sampling variance, so that it has mean
    zero when the identity holds.

    Args:
        :target (GaussianMeasure or MixtureMeasure): Data distribution
        :C (CovOperator): Noise covariance
        :s (float): Earlier time
        :t (float): Later time, t >= s
        :n_mc (int): Number of forward pairs
        :rng (int or np.random.Generator, default=None): Seed or generator
        :n_eval (int, default=500): Number of X_t at which the identity is checked
        :min_ess (float, default=50): Smallest acceptable mean effective sample size
        :chunk_size (int, default=64): Evaluation points processed together

    Returns:
        :report (MartingaleReport): Deviation and its Monte-Carlo standard error
    """
    if s > t or s <= 0:
        raise ValueError("martingale_check needs 0 < s <= t")
    if s == t:
        return MartingaleReport(s, t, n_mc, 0.0, 0.0)
    rng = as_generator(rng)
    score = oracle_score_fn(target, C)
    x0 = GridFunction(target.grid, np.atleast_2d(sample_target(target, rng, n_mc).values))
    xs = transition_sample(x0, s, C, rng).xt
    xt = transition_sample(xs, t - s, C, rng).xt

    dt = t - s
    decay = np.exp(-0.5 * dt)
    noise_var = -np.expm1(-dt)
    f = score(s, xs.values)
    ws = _whiten(xs.values, C) * decay
    ws_sq = np.sum(ws ** 2, axis=-1)

    n_eval = min(n_eval, n_mc)
    y = xt.values[:n_eval]
    wy = _whiten(y, C)
    s_t = score(t, y)
    D = C.grid.n_points

    devs = np.empty(n_eval)
    ess = np.empty(n_eval)
    for start in range(0, n_eval, chunk_size):
        stop = min(start + chunk_size, n_eval)
        dist = (np.sum(wy[start:stop] ** 2, axis=-1)[:, None] - 2 * wy[start:stop] @ ws.T
                + ws_sq[None, :])
        log_w = -0.5 * dist / noise_var
        log_w -= scipy.special.logsumexp(log_w, axis=1, keepdims=True)
        W = np.exp(log_w)
        cond = W @ f
        spread = (np.sum(f ** 2, axis=-1)[None, :] - 2 * cond @ f.T
                  + np.sum(cond ** 2, axis=-1)[:, None]) / D
        is_var = np.sum(W ** 2 * spread, axis=1)
        resid = np.exp(0.5 * dt) * cond - s_t[start:stop]
        devs[start:stop] = np.sum(resid ** 2, axis=-1) / D - np.exp(dt) * is_var
        ess[start:stop] = 1.0 / np.sum(W ** 2, axis=1)

    if np.mean(ess) < min_ess:
        raise UnreliableEstimateError(
            f"mean effective sample size {np.mean(ess):.1f} is below {min_ess}")
    report = MartingaleReport(s, t, n_mc, float(np.mean(devs)),
                              float(np.std(devs, ddof=1) / np.sqrt(n_eval)),
                              float(np.mean(ess)), float(np.min(ess)))
    logger.info("martingale check (s=%g, t=%g): deviation %.3e +- %.3e, mean ESS %.1f",
                s, t, report.deviation, report.stderr, report.mean_ess)
    return report


def score_second_moments(target, C, times, n_mc=10000, rng=None):
    """
    E ||s(t, X_t)||^2 over a time grid, together with exp(-t) E ||s(t, X_t)||^2.

    The scaled quantity is non-increasing in t by the reverse-time martingale property.
    Gaussian targets are evaluated in closed form; mixtures by Monte Carlo with the same
    initial draws and noise at every time.

    Args:
        :target (GaussianMeasure or MixtureMeasure): Data distribution
        :C (CovOperator): Noise covariance
        :times (array-like): Times at which to evaluate
        :n_mc (int, default=10000): Monte-Carlo draws (mixtures only)
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :moments (dict): 'times', 'second_moment', 'scaled', 'sup'
    """
    times = np.asarray(times, dtype=float)
    D = C.grid.n_points
    moments = np.empty(len(times))
    if isinstance(target, GaussianMeasure):
        for i, t in enumerate(times):
            A, b = gaussian_score_affine(target, C, t)
            p_t = marginal_gaussian(target.mean, target.cov, t, C)
            mean = A @ p_t.mean.values + b
            moments[i] = mean @ mean / D + np.trace(A @ p_t.cov.operator_matrix @ A.T)
    else:
        rng = as_generator(rng)
        score = oracle_score_fn(target, C)
        x0 = np.atleast_2d(sample_target(target, rng, n_mc).values)
        xi = sample_gaussian(C, rng=rng, n=n_mc).values
        for i, t in enumerate(times):
            xt = np.exp(-0.5 * t) * x0 + np.sqrt(-np.expm1(-t)) * xi
            moments[i] = np.mean(np.sum(score(t, xt) ** 2, axis=-1)) / D
    return {'times': times, 'second_moment': moments, 'scaled': np.exp(-times) * moments,
            'sup': float(np.max(moments))}


def stationary_target(C):
    """The stationary measure N(0, C) of the forward process."""
    return GaussianMeasure(GridFunction.zeros(C.grid), C)


__all__ = ['ABSOLUTE', 'RELATIVE', 'MixtureMeasure', 'ScoreFn', 'gaussian_score_affine',
           'MartingaleReport', 'to_relative', 'to_absolute', 'gaussian_score', 'mixture_score',
           'affine_cache_size', 'gaussian_score_fn', 'mixture_score_fn', 'oracle_score_fn', 'denoise_mean',
           'martingale_check', 'score_second_moments', 'stationary_target']
