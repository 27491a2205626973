import math
import unittest

import numpy as np

import infinite_sgm.metrics as metrics
from infinite_sgm.covariance import GaussianMeasure, brownian_cov, rbf_cov, sample_gaussian
from infinite_sgm.errors import DimensionError
from infinite_sgm.function_space import Grid, GridFunction


def test_w2_gaussian():

    grid = Grid(16)
    C = brownian_cov(grid)
    zero = GridFunction(grid, np.zeros(16))
    a = GaussianMeasure(zero, C)

    # Check the axioms on a few measures
    b = GaussianMeasure(GridFunction(grid, np.ones(16)), rbf_cov(grid, 0.2))
    c = GaussianMeasure(zero, rbf_cov(grid, 0.1))
    assert math.isclose(metrics.w2_gaussian(a, a), 0.0, abs_tol=1e-6)
    assert math.isclose(metrics.w2_gaussian(a, b), metrics.w2_gaussian(b, a), rel_tol=1e-6)
    assert metrics.w2_gaussian(a, c) <= metrics.w2_gaussian(a, b) + metrics.w2_gaussian(b, c) + 1e-9

    # A mean shift by the constant 1 has L^2 norm 1
    shifted = GaussianMeasure(GridFunction(grid, np.ones(16)), C)
    assert math.isclose(metrics.w2_gaussian(a, shifted), 1.0, rel_tol=1e-6)

    # Scaled covariances: W2 = sqrt(tr C) |sqrt(alpha) - 1|
    scaled = GaussianMeasure(zero, C.scaled(4.0))
    assert math.isclose(metrics.w2_gaussian(a, scaled), np.sqrt(C.trace), rel_tol=1e-6)

    with unittest.TestCase().assertRaises(DimensionError):
        metrics.w2_gaussian(a, GaussianMeasure(GridFunction(Grid(8), np.zeros(8)),
                                               brownian_cov(Grid(8))))


def test_empirical_gaussian():

    grid = Grid(8)
    C = brownian_cov(grid)
    samples = sample_gaussian(C, rng=0, n=20000)
    emp = metrics.empirical_gaussian(samples)
    assert np.allclose(emp.mean.values, 0.0, atol=0.05)
    assert metrics.w2_gaussian(emp, GaussianMeasure(GridFunction(grid, np.zeros(8)), C)) < 0.05

    with unittest.TestCase().assertRaises(ValueError):
        metrics.empirical_gaussian(samples[:1])


def test_w2_1d():

    a = np.array([0.0, 1.0, 2.0])
    assert metrics.w2_1d(a, a[::-1]) == 0.0
    assert math.isclose(metrics.w2_1d(a, a + 0.5), 0.25)

    # Unequal sizes: each point of [0, 1] gets half of the mass of 0.5
    assert math.isclose(metrics.w2_1d([0.5], [0.0, 1.0]), 0.25)
    assert math.isclose(metrics.w2_1d([0.0, 1.0], [0.5]), 0.25)


def test_sliced_w2():

    grid = Grid(16)
    xs = sample_gaussian(brownian_cov(grid), rng=0, n=200)

    same = metrics.sliced_w2(xs, xs, rng=0)
    assert same.value == 0.0 and same.stderr == 0.0 and same.n_proj == 128

    # A shift by c moves every slice by at most ||c||
    shift = 0.7
    moved = metrics.sliced_w2(xs, xs.with_values(xs.values + shift), n_proj=64, rng=1)
    assert 0 < moved.value <= shift + 1e-12
    assert moved.stderr > 0

    test = unittest.TestCase()
    with test.assertRaises(ValueError):
        metrics.sliced_w2(xs, GridFunction(grid, np.zeros((0, 16))))
    with test.assertRaises(DimensionError):
        metrics.sliced_w2(xs, GridFunction(Grid(8), np.zeros((3, 8))))


def test_quadratic_variation():

    for D in [4, 64]:
        line = GridFunction.from_callable(Grid(D), lambda t: t)
        assert math.isclose(metrics.quadratic_variation(line), (D - 1) / D ** 2)

    batch = GridFunction(Grid(3), [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    assert np.allclose(metrics.quadratic_variation(batch), [2.0, 0.0])

    with unittest.TestCase().assertRaises(DimensionError):
        metrics.quadratic_variation(GridFunction(Grid(1), [1.0]))


def test_spectrum_compare():

    grid = Grid(16)
    C = rbf_cov(grid, 0.2)
    samples = sample_gaussian(C, rng=0, n=5000)
    report = metrics.spectrum_compare(samples, C, 3)
    assert report['k'] == 3 and len(report['empirical']) == 3
    assert np.allclose(report['target'], C.eigenvalues[:3])
    assert report['max_rel_error'] < 0.15

    assert metrics.spectrum_compare(samples, C, 0)['max_rel_error'] == 0.0
    with unittest.TestCase().assertRaises(DimensionError):
        metrics.spectrum_compare(samples, C, 17)


def test_qv_location_test():

    rng = np.random.default_rng(0)
    a = rng.normal(1.0, 0.1, 200)
    same = metrics.qv_location_test(a, a)
    assert math.isclose(same['pvalue'], 1.0) and not same['reject']

    far = metrics.qv_location_test(a, rng.normal(2.0, 0.1, 200))
    assert far['reject'] and far['pvalue'] < 1e-10
    assert math.isclose(far['mean_a'], np.mean(a))


def test_overlap_coefficient():

    a = np.linspace(0, 1, 100)
    assert math.isclose(metrics.overlap_coefficient(a, a), 1.0)
    assert metrics.overlap_coefficient(a, a + 10.0) == 0.0
    assert metrics.overlap_coefficient([], a) == 0.0
    assert metrics.overlap_coefficient([2.0, 2.0], [2.0]) == 1.0


def test_metric_row():

    row = metrics.metric_row('w2', 0.1, config_hash='abc')
    assert row == {'metric': 'w2', 'value': 0.1, 'stderr': None, 'config_hash': 'abc'}
