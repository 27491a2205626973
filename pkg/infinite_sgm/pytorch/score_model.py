"""
Time-conditioned MLP noise predictor and its denoising score-matching training loop.
"""
import logging
import warnings

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from ..errors import DimensionError, NumericalError
from ..forward_process import DEFAULT_T_MIN, noising_batch
from ..io import read_json, write_json
from ..score_model import LossReport, TrainConfig, loss_metric
from ..score_oracle import ScoreFn, to_absolute, to_relative
from .utils import (DTYPE, as_tensor, flat_parameters, noise_scale, quadratic_norm,
                    set_flat_parameters, time_embedding)

logger = logging.getLogger(__name__)

device = torch.device("cpu")


class ScoreNet(nn.Module):
    """
    MLP mapping (t, x_t) to a noise prediction on the grid.

    Args:
        :n_points (int): Grid size D (input and output width)
        :hidden (tuple of int, default=(256, 256, 256)): Hidden layer widths
        :n_freqs (int, default=16): Number of time-embedding wavelengths
        :parameterization (str, default='absolute'): Drift the outputs are converted to
    """

    def __init__(self, n_points, hidden=(256, 256, 256), n_freqs=16, parameterization='absolute'):
        super().__init__()
        if parameterization not in ('absolute', 'relative'):
            raise NotImplementedError(f"Unknown parameterization '{parameterization}'")
        self.n_points = int(n_points)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_freqs = int(n_freqs)
        self.parameterization = parameterization
        widths = (self.n_points + 2 * self.n_freqs,) + self.hidden
        layers = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(w_in, w_out), nn.SiLU()]
        layers.append(nn.Linear(widths[-1], self.n_points))
        self.mlp = nn.Sequential(*layers).to(device=device, dtype=DTYPE)

    @property
    def arch(self):
        return {'n_points': self.n_points, 'widths': list(self.hidden), 'n_freqs': self.n_freqs}

    def forward(self, t, x):
        """
        Args:
            :t (torch.Tensor): Times of shape (n,)
            :x (torch.Tensor): Noised values of shape (n, D)

        Returns:
            :out (torch.Tensor): Noise predictions of shape (n, D)
        """
        return self.mlp(torch.cat([x, time_embedding(t, self.n_freqs)], dim=-1))


def pair_tensors(pair):
    xt = as_tensor(np.atleast_2d(pair.xt.values))
    xi = as_tensor(np.atleast_2d(pair.xi.values))
    t = as_tensor(np.broadcast_to(np.asarray(pair.t, dtype=float), (xt.shape[0],)))
    return t, xt, xi


def loss_on_pair(net, pair, G, loss_kind='absolute', reduce=True):
    """
    Denoising score-matching loss of the network on a batch, as a differentiable tensor.

    Args:
        :net (ScoreNet): The network
        :pair (NoisingPair): Batch of noising pairs
        :G (torch.Tensor): Loss-norm Gram matrix, see score_model.loss_metric
        :loss_kind (str, default='absolute'): 'absolute' or 'relative'
        :reduce (bool, default=True): Average over the batch

    Returns:
        :loss (torch.Tensor): Scalar, or one value per example
    """
    t, xt, xi = pair_tensors(pair)
    resid = net(t, xt) + xi
    if loss_kind == 'relative':
        resid = resid - noise_scale(t)[:, None] * xt
    elif loss_kind != 'absolute':
        raise NotImplementedError(f"Unknown loss kind '{loss_kind}'")
    per_example = quadratic_norm(resid, G)
    return per_example.mean() if reduce else per_example


def _time_bins(cfg):
    grid = cfg.time_grid()
    if grid is not None:
        return [(tau, tau) for tau in grid]
    edges = np.linspace(cfg.t_min, cfg.T, 11)
    return list(zip(edges[:-1], edges[1:]))


def _per_time_breakdown(per_example, t, cfg):
    rows = []
    for lo, hi in _time_bins(cfg):
        mask = (t == lo) if lo == hi else (t >= lo) & (t <= hi)
        count = int(np.sum(mask))
        rows.append({'t_lo': float(lo), 't_hi': float(hi), 'count': count,
                     'loss': float(np.mean(per_example[mask])) if count else float('nan')})
    return rows


def _optimizer(net, cfg):
    if cfg.optimizer == 'rmsprop':
        return torch.optim.RMSprop(net.parameters(), lr=cfg.lr, momentum=0.0)
    if cfg.optimizer == 'adam':
        return torch.optim.Adam(net.parameters(), lr=cfg.lr)
    raise NotImplementedError(f"Unknown optimizer '{cfg.optimizer}'")


def train(data, C, cfg=TrainConfig()):
    """
    Fit a ScoreNet by denoising score matching.

    Training times are drawn per example (uniformly on [t_min, T] or over the discrete
    time grid), the noise is drawn fresh for every batch, and a held-out share of the data
    is noised once so that its loss is comparable between epochs.

    Args:
        :data (GridFunction): Batch of training functions
        :C (CovOperator): Noise covariance
        :cfg (TrainConfig): Training settings

    Returns:
        :net (ScoreNet): The trained network
        :report (LossReport): Training and held-out losses
    """
    if not data.is_batch or len(data) < 2:
        raise ValueError("training needs a batch of at least 2 functions")
    if data.grid != C.grid:
        raise DimensionError("data and noise covariance live on different grids")
    if len(data) < 100:
        warnings.warn(f"Training on only {len(data)} functions; the fit will be poor")

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = ScoreNet(data.grid.n_points, cfg.hidden, cfg.n_freqs, cfg.loss_kind)
    G = as_tensor(loss_metric(cfg.loss_norm, data.grid, C))
    optimizer = _optimizer(net, cfg)
    time_grid = cfg.time_grid()

    order = rng.permutation(len(data))
    n_hold = int(round(cfg.holdout_fraction * len(data)))
    hold_idx, train_idx = np.sort(order[:n_hold]), np.sort(order[n_hold:])
    if n_hold > 0:
        hold_pair = noising_batch(data[hold_idx], C, cfg.t_min, cfg.T, rng, time_grid)
    else:
        hold_pair = None
        logger.warning("no held-out split; reporting the training loss instead")

    report = LossReport()
    for epoch in tqdm(range(cfg.n_epochs), disable=not cfg.progress, desc='train'):
        net.train()
        total, count = 0.0, 0
        shuffled = rng.permutation(train_idx)
        for start in range(0, len(shuffled), cfg.batch_size):
            idx = shuffled[start:start + cfg.batch_size]
            pair = noising_batch(data[idx], C, cfg.t_min, cfg.T, rng, time_grid)
            optimizer.zero_grad()
            loss = loss_on_pair(net, pair, G, cfg.loss_kind)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch starting at {start}")
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        report.epoch_loss.append(total / count)

        if hold_pair is not None:
            net.eval()
            with torch.no_grad():
                per_example = loss_on_pair(net, hold_pair, G, cfg.loss_kind, reduce=False).numpy()
            report.heldout_loss.append(float(np.mean(per_example)))
        else:
            report.heldout_loss.append(report.epoch_loss[-1])
        logger.info("epoch %d: train loss %.5f, held-out loss %.5f",
                    epoch + 1, report.epoch_loss[-1], report.heldout_loss[-1])

    report.final_loss = report.heldout_loss[-1]
    if hold_pair is not None:
        t_hold = np.broadcast_to(np.asarray(hold_pair.t, dtype=float), (len(per_example),))
        report.per_time = _per_time_breakdown(per_example, t_hold, cfg)
    return net, report


def as_score_fn(net, parameterization=None, t_min=DEFAULT_T_MIN):
    """
    Wrap a trained network as a drift, dividing by sigma_t = sqrt(1 - exp(-t)).

    Times below t_min are clamped to t_min; each clamp is counted in
    diagnostics['t_clamped'] and warned about.

    Args:
        :net (ScoreNet): Trained network
        :parameterization (str, default=None): Requested drift form; the network's own
            form if None
        :t_min (float, default=1e-3): Smallest evaluation time

    Returns:
        :s_fn (ScoreFn): The learned drift
    """
    diagnostics = {'t_clamped': 0}

    def evaluate(t, values):
        if t < t_min:
            diagnostics['t_clamped'] += 1
            warnings.warn(f"t = {t} is below t_min = {t_min}; clamping")
            t = t_min
        x = as_tensor(np.atleast_2d(values))
        tt = torch.full((x.shape[0],), float(t), dtype=DTYPE)
        net.eval()
        with torch.no_grad():
            out = (net(tt, x) / noise_scale(tt)[:, None]).numpy()
        return out.reshape(np.shape(values))

    s_fn = ScoreFn(evaluate, net.parameterization, 'learned', diagnostics)
    if parameterization is None or parameterization == net.parameterization:
        return s_fn
    return to_relative(s_fn) if parameterization == 'relative' else to_absolute(s_fn)


def save_checkpoint(net, path, t_min=DEFAULT_T_MIN, C_ref=None):
    """
    Write {arch, params, parameterization, t_min, C_ref} as JSON.

    Args:
        :net (ScoreNet): Network to save
        :path (str): Destination file
        :t_min (float, default=1e-3): Clamp time used when evaluating
        :C_ref (str or dict, default=None): Operator checkpoint (file name or content)
    """
    write_json(path, {'arch': net.arch, 'params': flat_parameters(net).tolist(),
                      'parameterization': net.parameterization, 't_min': t_min,
                      'C_ref': C_ref})
    logger.info("wrote score-network checkpoint to %s", path)


def load_checkpoint(path):
    """
    Rebuild a ScoreNet from a JSON checkpoint.

    Returns:
        :net (ScoreNet): The network with its saved parameters
        :meta (dict): The remaining checkpoint fields (t_min, C_ref, parameterization)
    """
    ckpt = read_json(path)
    arch = ckpt['arch']
    net = ScoreNet(arch['n_points'], arch['widths'], arch['n_freqs'], ckpt['parameterization'])
    set_flat_parameters(net, ckpt['params'])
    meta = {k: v for k, v in ckpt.items() if k not in ('arch', 'params')}
    return net, meta


def score_relative_error(s_fn, reference, C, times, n_test=1000, rng=None, target=None):
    """
    Relative L^2 error of a drift against a reference drift, averaged over times.

    Test points are X_t drawn from the forward marginal of target (N(0, C) if None).

    Returns:
        :errors (dict): 'per_time' list and their 'mean'
    """
    from ..covariance import as_generator, sample_gaussian
    from ..forward_process import transition_sample

    rng = as_generator(rng)
    per_time = []
    for t in times:
        if target is None:
            x0 = sample_gaussian(C, rng=rng, n=n_test)
        else:
            x0 = target.sample(rng, n_test)
        xt = transition_sample(x0, t, C, rng).xt
        a = to_absolute(s_fn)(t, xt).values
        b = to_absolute(reference)(t, xt).values
        per_time.append(float(np.sqrt(np.sum((a - b) ** 2) / np.sum(b ** 2))))
    return {'times': [float(t) for t in times], 'per_time': per_time,
            'mean': float(np.mean(per_time))}


__all__ = ['ScoreNet', 'train', 'as_score_fn', 'loss_on_pair',
           'save_checkpoint', 'load_checkpoint', 'score_relative_error']
