"""
Denoising score matching: training configuration, loss norms and the loss definitions.

The network is a noise predictor. With sigma_t = sqrt(1 - exp(-t)),

    absolute loss:  || net(t, x_t) + xi ||^2,                 s(t, x)    = net(t, x) / sigma_t
    relative loss:  || net(t, x_t) + xi - sigma_t x_t ||^2,   s_nu(t, x) = net(t, x) / sigma_t

and the norm is either the flat L^2 norm or a Cameron-Martin norm. The torch network and
its training loop live in infinite_sgm.pytorch.score_model.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, SingularOperatorError
from .forward_process import DEFAULT_T_MAX, DEFAULT_T_MIN
from .function_space import L2, CameronMartin

logger = logging.getLogger(__name__)

LOSS_KINDS = ('absolute', 'relative')
OPTIMIZERS = ('rmsprop', 'adam')


@dataclass(frozen=True)
class TrainConfig:
    """
    Settings of one training run.

    Args:
        :loss_kind (str, default='absolute'): 'absolute' or 'relative'
        :loss_norm (InnerProductKind, default=None): Loss norm; None means the
            Cameron-Martin norm of the noise covariance
        :n_epochs (int, default=20): Passes over the training set
        :batch_size (int, default=64): Mini-batch size
        :lr (float, default=1e-3): Step size
        :optimizer (str, default='rmsprop'): 'rmsprop' (momentum 0) or 'adam'
        :n_time_steps (int, default=None): If set, training times are drawn uniformly from
            this many equally spaced times in [t_min, T]; otherwise uniformly on [t_min, T]
        :t_min (float, default=1e-3): Smallest training time
        :T (float, default=10): Largest training time
        :seed (int, default=0): Seed of initialisation, data order and noise
        :hidden (tuple of int, default=(256, 256, 256)): MLP hidden widths
        :n_freqs (int, default=16): Number of time-embedding frequencies
        :holdout_fraction (float, default=0.1): Share of the data kept for evaluation
        :progress (bool, default=False): Show a progress bar over epochs
    """
    loss_kind: str = 'absolute'
    loss_norm: Optional[object] = None
    n_epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = 'rmsprop'
    n_time_steps: Optional[int] = None
    t_min: float = DEFAULT_T_MIN
    T: float = DEFAULT_T_MAX
    seed: int = 0
    hidden: tuple = (256, 256, 256)
    n_freqs: int = 16
    holdout_fraction: float = 0.1
    progress: bool = False

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise NotImplementedError(f"Unknown loss kind '{self.loss_kind}'")
        if self.optimizer not in OPTIMIZERS:
            raise NotImplementedError(f"Unknown optimizer '{self.optimizer}'")
        if self.n_time_steps is not None and self.n_time_steps < 1:
            raise ValueError("n_time_steps must be at least 1")
        if not 0 < self.t_min < self.T:
            raise ValueError("need 0 < t_min < T")
        if self.n_epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("n_epochs, batch_size and lr must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    def time_grid(self):
        """The discrete training times, or None for continuous sampling."""
        if self.n_time_steps is None:
            return None
        if self.n_time_steps == 1:
            return np.array([self.t_min])
        return np.linspace(self.t_min, self.T, self.n_time_steps)


@dataclass
class LossReport:
    """
    Args:
        :epoch_loss (list of float): Mean training loss per epoch
        :heldout_loss (list of float): Held-out loss after every epoch
        :final_loss (float): Held-out loss at the end of training
        :per_time (list of dict): Held-out loss broken down by time bin {t_lo, t_hi, loss, count}
    """
    epoch_loss: list = field(default_factory=list)
    heldout_loss: list = field(default_factory=list)
    final_loss: float = float('nan')
    per_time: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def noise_scale(t):
    """sigma_t = sqrt(1 - exp(-t))."""
    return np.sqrt(-np.expm1(-np.asarray(t, dtype=float)))


def loss_metric(loss_norm, grid, C=None):
    """
    Gram matrix G with ||v||^2 = v G v^T on grid values.

    Args:
        :loss_norm (InnerProductKind or None): L2, CameronMartin, or None for the
            Cameron-Martin norm of C
        :grid (Grid): Grid of the values
        :C (CovOperator, default=None): Noise covariance, used when loss_norm is None

    Returns:
        :G (np.ndarray): (D, D) symmetric positive semi-definite matrix
    """
    if loss_norm is None:
        if C is None:
            raise ValueError("a covariance is needed for the default Cameron-Martin loss norm")
        loss_norm = CameronMartin(C)
    if isinstance(loss_norm, L2):
        return np.eye(grid.n_points) / grid.n_points
    if isinstance(loss_norm, CameronMartin):
        W = loss_norm.cov
        if W.grid != grid:
            raise DimensionError("loss-norm operator lives on a different grid")
        keep = W.retained
        if not np.any(keep):
            raise SingularOperatorError("loss-norm operator has no retained eigenvalues")
        D = W.grid.n_points
        E = W.eigenfunctions[keep]
        return (E.T / W.eigenvalues[keep]) @ E / D ** 2
    raise NotImplementedError(f"Unknown loss norm {loss_norm!r}")


def _column(t, n):
    t = np.asarray(t, dtype=float)
    return np.broadcast_to(t, (n,))[:, None] if t.ndim <= 1 else t


def dsm_residual(net_out, pair, loss_kind):
    """Per-example residual of the denoising loss on grid values."""
    values = np.atleast_2d(net_out.values if hasattr(net_out, 'values') else net_out)
    xi = np.atleast_2d(pair.xi.values)
    if values.shape != xi.shape:
        raise DimensionError(f"network output {values.shape} does not match noise {xi.shape}")
    if loss_kind == 'absolute':
        return values + xi
    if loss_kind == 'relative':
        sigma = noise_scale(_column(pair.t, len(xi)))
        return values + xi - sigma * np.atleast_2d(pair.xt.values)
    raise NotImplementedError(f"Unknown loss kind '{loss_kind}'")


def dsm_loss(net_out, pair, loss_kind='absolute', loss_norm=L2(), C=None, reduce=True):
    """
    Denoising score-matching loss of network outputs on a batch of noising pairs.

    Args:
        :net_out (GridFunction or np.ndarray): Network outputs at (pair.t, pair.xt)
        :pair (NoisingPair): Batch the outputs were computed on
        :loss_kind (str, default='absolute'): 'absolute' or 'relative'
        :loss_norm (InnerProductKind, default=L2()): Norm of the residual
        :C (CovOperator, default=None): Noise covariance, for loss_norm=None
        :reduce (bool, default=True): Average over the batch

    Returns:
        :loss (float or np.ndarray): Batch mean, or one value per example
    """
    G = loss_metric(loss_norm, pair.xi.grid, C)
    r = dsm_residual(net_out, pair, loss_kind)
    per_example = np.einsum('ni,ij,nj->n', r, G, r)
    return float(np.mean(per_example)) if reduce else per_example


def optimal_output(score, pair, loss_kind='absolute'):
    """
    Loss minimiser sigma_t * s(t, x_t) (or sigma_t * s_nu) for a closed-form drift.

    Times are grouped so the drift is evaluated once per distinct time.
    """
    from .score_oracle import to_absolute, to_relative

    fn = to_absolute(score) if loss_kind == 'absolute' else to_relative(score)
    xt = np.atleast_2d(pair.xt.values)
    t = np.broadcast_to(np.asarray(pair.t, dtype=float), (len(xt),))
    out = np.empty_like(xt)
    for tau in np.unique(t):
        rows = t == tau
        out[rows] = noise_scale(tau) * fn.evaluate(tau, xt[rows])
    return out


@dataclass
class DecompositionReport:
    loss_diff: float
    oracle_diff: float
    stderr: float
    n: int

    def to_dict(self):
        return asdict(self)


def dsm_decomposition_check(out_a, out_b, score, pair, loss_kind='absolute', loss_norm=L2(),
                            C=None):
    """
    Compare the loss difference of two candidates with their oracle-error difference.

    loss(A) - loss(B) equals E||A - n*||^2 - E||B - n*||^2 in expectation, n* being the
    loss minimiser. The per-example difference of the two sides is 2 <A - B, xi + n*>
    (absolute kind), whose sample standard deviation gives the paired standard error.

    Args:
        :out_a (np.ndarray): Outputs of candidate A on the batch
        :out_b (np.ndarray): Outputs of candidate B on the batch
        :score (ScoreFn): Closed-form drift of the target
        :pair (NoisingPair): Batch of noising pairs
        :loss_kind (str, default='absolute'): 'absolute' or 'relative'
        :loss_norm (InnerProductKind, default=L2()): Norm of the residual

    Returns:
        :report (DecompositionReport): loss_diff, oracle_diff and the paired stderr
    """
    G = loss_metric(loss_norm, pair.xi.grid, C)
    a = np.atleast_2d(out_a)
    b = np.atleast_2d(out_b)
    best = optimal_output(score, pair, loss_kind)
    ra = dsm_residual(a, pair, loss_kind)
    rb = dsm_residual(b, pair, loss_kind)
    loss_d = np.einsum('ni,ij,nj->n', ra, G, ra) - np.einsum('ni,ij,nj->n', rb, G, rb)
    ea = a - best
    eb = b - best
    oracle_d = np.einsum('ni,ij,nj->n', ea, G, ea) - np.einsum('ni,ij,nj->n', eb, G, eb)
    n = len(a)
    report = DecompositionReport(float(np.mean(loss_d)), float(np.mean(oracle_d)),
                                 float(np.std(loss_d - oracle_d, ddof=1) / np.sqrt(n)), n)
    logger.info("loss difference %.4e, oracle difference %.4e (stderr %.2e)",
                report.loss_diff, report.oracle_diff, report.stderr)
    return report
