"""
Exponential-integrator discretisation of the reverse SDEs

    classical:  dY = (Y / 2 + s(T - u, Y)) du + sqrt(C) dW
    relative:   dY = (-Y / 2 + s_nu(T - u, Y)) du + sqrt(C) dW

with the linear part integrated exactly and the drift frozen at the left knot.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .covariance import GaussianMeasure, as_generator, from_operator_matrix, sample_gaussian
from .errors import NumericalError
from .forward_process import DEFAULT_T_MAX, DEFAULT_T_MIN
from .function_space import GridFunction
from .score_oracle import denoise_mean, gaussian_score_affine, to_absolute, to_relative

logger = logging.getLogger(__name__)

CLASSICAL = 'classical'
RELATIVE = 'relative'
VARIANTS = (CLASSICAL, RELATIVE)


@dataclass(frozen=True, eq=False)
class SDESchedule:
    """
    Reverse-time knots T = u_0 > u_1 > ... > u_N = t_min.

    Args:
        :knots (np.ndarray): Strictly decreasing positive times, at least two
        :last_step_denoise (bool, default=True): Replace the last step by the denoising mean
        :variant (str, default='classical'): 'classical' or 'relative'
    """
    knots: np.ndarray
    last_step_denoise: bool = True
    variant: str = CLASSICAL

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2:
            raise ValueError("a schedule needs at least two knots")
        if np.any(np.diff(knots) >= 0):
            raise ValueError("knots must be strictly decreasing")
        if knots[-1] <= 0:
            raise ValueError("the last knot t_min must be positive")
        if self.variant not in VARIANTS:
            raise NotImplementedError(f"Unknown integrator variant '{self.variant}'")
        object.__setattr__(self, 'knots', knots)

    @property
    def T(self):
        return float(self.knots[0])

    @property
    def t_min(self):
        return float(self.knots[-1])

    @property
    def n_steps(self):
        return len(self.knots) - 1

    def to_dict(self):
        return {'T': self.T, 't_min': self.t_min, 'n_steps': self.n_steps,
                'last_step_denoise': self.last_step_denoise, 'variant': self.variant}


def make_schedule(n_steps=200, T=DEFAULT_T_MAX, t_min=DEFAULT_T_MIN, spacing='uniform',
                  last_step_denoise=True, variant=CLASSICAL):
    """
    Build a schedule with uniform or geometric knot spacing.

    Args:
        :n_steps (int, default=200): Number of intervals N
        :T (float, default=10): Horizon
        :t_min (float, default=1e-3): Last knot
        :spacing (str, default='uniform'): 'uniform' or 'geometric' (dense near t_min)
        :last_step_denoise (bool, default=True): See SDESchedule
        :variant (str, default='classical'): See SDESchedule

    Returns:
        :sched (SDESchedule): The schedule
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not 0 < t_min < T:
        raise ValueError("need 0 < t_min < T")
    if spacing == 'uniform':
        knots = np.linspace(T, t_min, n_steps + 1)
    elif spacing == 'geometric':
        knots = np.geomspace(T, t_min, n_steps + 1)
    else:
        raise NotImplementedError(f"Unknown knot spacing '{spacing}'")
    return SDESchedule(knots, last_step_denoise, variant)


def _step_coefficients(delta, variant):
    """Multipliers (state, drift, noise variance) of one exponential-integrator step."""
    if variant == CLASSICAL:
        return np.exp(0.5 * delta), 2.0 * np.expm1(0.5 * delta), np.expm1(delta)
    if variant == RELATIVE:
        return np.exp(-0.5 * delta), -2.0 * np.expm1(-0.5 * delta), -np.expm1(-delta)
    raise NotImplementedError(f"Unknown integrator variant '{variant}'")


def _drift_for(drift, variant):
    return to_absolute(drift) if variant == CLASSICAL else to_relative(drift)


def exp_step(y, u_k, u_next, drift, C, variant=CLASSICAL, rng=None):
    """
    One exponential-integrator step from time u_k down to u_next.

    classical: y' = exp(D/2) y + 2 (exp(D/2) - 1) s(u_k, y) + N(0, (exp(D) - 1) C)
    relative:  y' = exp(-D/2) y + 2 (1 - exp(-D/2)) s_nu(u_k, y) + N(0, (1 - exp(-D)) C)

    where D = u_k - u_next. The drift is converted to the variant's parameterization.

    Args:
        :y (GridFunction): Current state (or batch)
        :u_k (float): Current time
        :u_next (float): Next time, < u_k
        :drift (ScoreFn): Reverse drift
        :C (CovOperator): Noise covariance
        :variant (str, default='classical'): 'classical' or 'relative'
        :rng (int or np.random.Generator, default=None): Seed or generator

    Returns:
        :y_next (GridFunction): State at u_next
    """
    if not u_k > u_next:
        raise ValueError("exp_step runs backwards in time: need u_k > u_next")
    rng = as_generator(rng)
    a, b, var = _step_coefficients(u_k - u_next, variant)
    s = _drift_for(drift, variant).evaluate(u_k, y.values)
    if not np.all(np.isfinite(s)):
        raise NumericalError(
            f"non-finite drift at u = {u_k:.5g} (step to {u_next:.5g}, {variant} variant)")
    n = len(y) if y.is_batch else None
    noise = sample_gaussian(C, rng=rng, n=n).values
    return y.with_values(a * y.values + b * s + np.sqrt(var) * noise)


def sample(drift, C, sched, n_samples, rng=None, progress=False, callback=None, guide=None):
    """
    Draw Y_0 ~ N(0, C) and integrate the reverse SDE along the schedule.

    With last_step_denoise the final interval is replaced by the denoising mean at
    u_{N-1}, adding no noise; a one-interval schedule then returns the denoising mean at T.

    Args:
        :drift (ScoreFn): Reverse drift
        :C (CovOperator): Noise covariance
        :sched (SDESchedule): Knots, variant and denoising flag
        :n_samples (int): Number of trajectories
        :rng (int or np.random.Generator, default=None): Seed or generator
        :progress (bool, default=False): Show a progress bar over knots
        :callback (callable, default=None): Called as callback(k, u_k, y) at every knot
        :guide (callable, default=None): Applied as y = guide(k, y, final) before every
            step and once more (final=True) to the output

    Returns:
        :samples (GridFunction): Batch of n_samples functions
    """
    rng = as_generator(rng)
    if n_samples == 0:
        warnings.warn("n_samples = 0; returning an empty batch")
        return GridFunction(C.grid, np.zeros((0, C.grid.n_points)))
    y = sample_gaussian(C, rng=rng, n=n_samples)
    knots = sched.knots
    N = sched.n_steps
    n_noisy = N - 1 if sched.last_step_denoise else N
    if callback is not None:
        callback(0, knots[0], y)
    for k in tqdm(range(n_noisy), disable=not progress, desc='sample'):
        if guide is not None:
            y = guide(k, y, False)
        y = exp_step(y, knots[k], knots[k + 1], drift, C, sched.variant, rng)
        if callback is not None:
            callback(k + 1, knots[k + 1], y)
    if sched.last_step_denoise:
        if guide is not None:
            y = guide(N - 1, y, False)
        y = denoise_mean(drift, knots[N - 1], y)
        if callback is not None:
            callback(N, knots[N], y)
    if guide is not None:
        y = guide(N, y, True)
    logger.debug("sampled %d trajectories over %d knots (%s variant)",
                 n_samples, N, sched.variant)
    return y


def gaussian_output_law(target, C, sched):
    """
    Exact law of the sampler output when the drift is the Gaussian oracle of target.

    Every step is affine in the state, so the mean and the operator matrix of the
    covariance are propagated in closed form, with no Monte-Carlo error.

    Args:
        :target (GaussianMeasure): Data distribution
        :C (CovOperator): Noise covariance
        :sched (SDESchedule): Schedule as passed to sample

    Returns:
        :law (GaussianMeasure): Law of the sampler output
    """
    D = C.grid.n_points
    eye = np.eye(D)
    M_C = C.operator_matrix
    mean = np.zeros(D)
    P = M_C.copy()
    knots = sched.knots
    N = sched.n_steps
    n_noisy = N - 1 if sched.last_step_denoise else N
    for k in range(n_noisy):
        A, b = gaussian_score_affine(target, C, knots[k])
        a, beta, var = _step_coefficients(knots[k] - knots[k + 1], sched.variant)
        if sched.variant == RELATIVE:
            A = A + eye
        G = a * eye + beta * A
        mean = G @ mean + beta * b
        P = G @ P @ G.T + var * M_C
    if sched.last_step_denoise:
        u = knots[N - 1]
        A, b = gaussian_score_affine(target, C, u)
        scale = np.exp(0.5 * u)
        G = scale * (eye - np.expm1(-u) * A)
        mean = G @ mean - scale * np.expm1(-u) * b
        P = G @ P @ G.T
    return GaussianMeasure(GridFunction(C.grid, mean), from_operator_matrix(C.grid, P))
