import math
import unittest

import numpy as np
import torch

import infinite_sgm.pytorch.score_model as torch_score_model
import infinite_sgm.pytorch.utils as torch_utils
from infinite_sgm.covariance import GaussianMeasure, brownian_cov, sample_gaussian
from infinite_sgm.forward_process import noising_batch
from infinite_sgm.function_space import L2, Grid, GridFunction
from infinite_sgm.metrics import empirical_gaussian, w2_gaussian
from infinite_sgm.reverse_sampler import make_schedule, sample
from infinite_sgm.score_model import TrainConfig, loss_metric
from infinite_sgm.score_oracle import gaussian_score_fn, stationary_target


def _small_config(**kwargs):
    base = dict(n_epochs=8, batch_size=64, lr=1e-3, hidden=(32, 32), n_freqs=4, seed=0,
                t_min=0.01, T=5.0)
    base.update(kwargs)
    return TrainConfig(**base)


def test_time_embedding():

    t = torch.tensor([1e-3, 0.5, 1.0, 10.0], dtype=torch_utils.DTYPE)
    emb = torch_utils.time_embedding(t, 6)
    assert emb.shape == (4, 12)
    assert torch.all(emb.abs() <= 1.0)

    # At t = 1 the log vanishes: sin = 0, cos = 1
    assert torch.allclose(emb[2, :6], torch.zeros(6, dtype=torch_utils.DTYPE))
    assert torch.allclose(emb[2, 6:], torch.ones(6, dtype=torch_utils.DTYPE))

    w = torch_utils.embedding_wavelengths(4)
    assert math.isclose(w[0].item(), 1.0) and math.isclose(w[-1].item(), 1000.0)


def test_score_net():

    net = torch_score_model.ScoreNet(8, hidden=(16,), n_freqs=3)
    t = torch.full((5,), 0.3, dtype=torch_utils.DTYPE)
    x = torch.zeros((5, 8), dtype=torch_utils.DTYPE)
    assert net(t, x).shape == (5, 8)
    assert net.arch == {'n_points': 8, 'widths': [16], 'n_freqs': 3}

    # Flat parameter round trip
    vec = torch_utils.flat_parameters(net)
    other = torch_score_model.ScoreNet(8, hidden=(16,), n_freqs=3)
    torch_utils.set_flat_parameters(other, vec)
    assert torch.allclose(net(t, x), other(t, x))

    with unittest.TestCase().assertRaises(NotImplementedError):
        torch_score_model.ScoreNet(8, parameterization='other')


def test_loss_gradient():

    # Autograd gradient of the loss against central finite differences
    torch.manual_seed(0)
    grid = Grid(6)
    C = brownian_cov(grid)
    data = sample_gaussian(C, rng=0, n=20)
    pair = noising_batch(data, C, rng=1)
    G = torch_utils.as_tensor(loss_metric(None, grid, C))
    net = torch_score_model.ScoreNet(6, hidden=(8,), n_freqs=2)

    loss = torch_score_model.loss_on_pair(net, pair, G, 'relative')
    loss.backward()
    weight = net.mlp[0].weight
    analytic = weight.grad[0, 0].item()

    h = 1e-6
    with torch.no_grad():
        weight[0, 0] += h
        up = torch_score_model.loss_on_pair(net, pair, G, 'relative').item()
        weight[0, 0] -= 2 * h
        down = torch_score_model.loss_on_pair(net, pair, G, 'relative').item()
        weight[0, 0] += h
    assert math.isclose(analytic, (up - down) / (2 * h), rel_tol=1e-5, abs_tol=1e-8)


def test_train():

    grid = Grid(8)
    C = brownian_cov(grid)
    data = sample_gaussian(C, rng=0, n=512)
    cfg = _small_config()

    net, report = torch_score_model.train(data, C, cfg)
    assert len(report.epoch_loss) == cfg.n_epochs
    assert len(report.heldout_loss) == cfg.n_epochs
    assert report.heldout_loss[-1] < report.heldout_loss[0]
    assert report.final_loss == report.heldout_loss[-1]
    assert sum(row['count'] for row in report.per_time) > 0

    # Same seed, same network
    net2, report2 = torch_score_model.train(data, C, cfg)
    assert torch.equal(torch_utils.flat_parameters(net), torch_utils.flat_parameters(net2))
    assert report.epoch_loss == report2.epoch_loss

    # Discrete training times
    _, report = torch_score_model.train(data, C, _small_config(n_epochs=1, n_time_steps=3))
    assert len(report.per_time) == 3

    test = unittest.TestCase()
    with test.assertRaises(ValueError):
        torch_score_model.train(data[:1], C, cfg)
    with test.assertWarns(UserWarning):
        torch_score_model.train(data[:50], C, _small_config(n_epochs=1))


def test_as_score_fn_and_checkpoint(tmp_path):

    grid = Grid(8)
    C = brownian_cov(grid)
    net = torch_score_model.ScoreNet(8, hidden=(16,), n_freqs=3)
    s_fn = torch_score_model.as_score_fn(net, t_min=0.01)
    x = sample_gaussian(C, rng=0, n=4)

    # Absolute drift: network output over sigma_t
    with torch.no_grad():
        raw = net(torch.full((4,), 0.5, dtype=torch_utils.DTYPE),
                  torch_utils.as_tensor(x.values)).numpy()
    assert np.allclose(s_fn(0.5, x).values, raw / np.sqrt(1 - np.exp(-0.5)))

    # Clamping below t_min
    with unittest.TestCase().assertWarns(UserWarning):
        s_fn(1e-4, x)
    assert s_fn.diagnostics['t_clamped'] == 1

    # Relative view
    rel = torch_score_model.as_score_fn(net, 'relative', t_min=0.01)
    assert np.allclose(rel(0.5, x).values, s_fn(0.5, x).values + x.values)

    # Checkpoint round trip
    path = tmp_path / 'model.json'
    torch_score_model.save_checkpoint(net, path, t_min=0.01, C_ref='cov.json')
    loaded, meta = torch_score_model.load_checkpoint(path)
    assert meta['C_ref'] == 'cov.json' and meta['t_min'] == 0.01
    assert np.allclose(torch_score_model.as_score_fn(loaded, t_min=0.01)(0.5, x).values,
                       s_fn(0.5, x).values)


def test_score_relative_error():

    grid = Grid(8)
    C = brownian_cov(grid)
    reference = gaussian_score_fn(stationary_target(C), C)
    errors = torch_score_model.score_relative_error(reference, reference, C, [0.1, 1.0],
                                                    n_test=100, rng=0)
    assert np.allclose(errors['per_time'], 0.0)
    assert errors['mean'] == 0.0


def test_learned_score_fidelity():

    # Gaussian data N(sin(pi t), C) on 16 points, noise C
    grid = Grid(16)
    C = brownian_cov(grid)
    target = GaussianMeasure(GridFunction.from_callable(grid, lambda t: np.sin(np.pi * t)), C)
    data = target.sample(rng=0, n=2000)
    cfg = _small_config(n_epochs=40, batch_size=128, hidden=(64, 64), optimizer='adam',
                        loss_kind='relative', loss_norm=L2())
    net, _ = torch_score_model.train(data, C, cfg)
    learned = torch_score_model.as_score_fn(net, t_min=cfg.t_min)
    oracle = gaussian_score_fn(target, C)

    # Check the relative L2 error against the oracle drift
    errors = torch_score_model.score_relative_error(learned, oracle, C, [0.5, 1.0, 2.0],
                                                    n_test=1000, rng=1, target=target)
    assert errors['mean'] <= 0.15

    # Learned-drift samples are about as close to the data law as oracle-drift samples
    sched = make_schedule(50, T=cfg.T, t_min=cfg.t_min)
    w2 = {}
    for name, drift in [('learned', learned), ('oracle', oracle)]:
        samples = sample(drift, C, sched, 1000, rng=3)
        w2[name] = w2_gaussian(empirical_gaussian(samples), target)
    assert w2['learned'] <= 2 * w2['oracle']


def test_learned_stationary_score():

    # Trained on N(0, C) itself, the network recovers s = -x
    grid = Grid(16)
    C = brownian_cov(grid)
    data = sample_gaussian(C, rng=4, n=2000)
    cfg = _small_config(n_epochs=20, batch_size=128, hidden=(64, 64), optimizer='adam',
                        loss_kind='relative', loss_norm=L2())
    net, _ = torch_score_model.train(data, C, cfg)
    learned = torch_score_model.as_score_fn(net, t_min=cfg.t_min)
    reference = gaussian_score_fn(stationary_target(C), C)
    errors = torch_score_model.score_relative_error(learned, reference, C, [2.0], n_test=1000,
                                                    rng=5)
    assert errors['mean'] <= 0.15
