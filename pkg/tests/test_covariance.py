import math
import unittest

import numpy as np

import infinite_sgm.covariance as covariance
from infinite_sgm.errors import DimensionError
from infinite_sgm.function_space import Grid, GridFunction, l2_inner


def test_traces():

    for D in [1, 8, 64]:
        grid = Grid(D)

        # Brownian covariance: trace = (1 / D) sum_i t_i
        C = covariance.brownian_cov(grid)
        assert math.isclose(C.trace, (D + 1) / (2 * D), rel_tol=1e-10)

        # RBF covariance: trace = variance
        C = covariance.rbf_cov(grid, 0.05, variance=2.0)
        assert math.isclose(C.trace, 2.0, rel_tol=1e-10)

        # Discrete identity
        C = covariance.identity_cov(grid, eigenvalue=3.0)
        assert math.isclose(C.trace, 3.0 * D)
        assert np.allclose(C.kernel_matrix, 3.0 * D * np.eye(D))


def test_spectrum_properties():

    grid = Grid(32)
    C = covariance.rbf_cov(grid, 0.1)

    # Sorted, non-negative, L2-orthonormal
    assert np.all(np.diff(C.eigenvalues) <= 0)
    assert np.all(C.eigenvalues >= 0)
    assert np.allclose(C.eigenfunctions @ C.eigenfunctions.T / 32, np.eye(32), atol=1e-10)

    # Kernel and operator matrices
    t = grid.points
    K = np.exp(-0.5 * ((t[:, None] - t[None, :]) / 0.1) ** 2)
    assert np.allclose(C.kernel_matrix, K, atol=1e-10)
    assert np.allclose(C.operator_matrix, K / 32, atol=1e-12)

    # Rebuilding from the operator matrix gives the same spectrum
    C2 = covariance.from_operator_matrix(grid, C.operator_matrix)
    assert np.allclose(C2.eigenvalues, C.eigenvalues, atol=1e-12)

    # Smooth kernels lose eigenpairs to the rank tolerance
    assert C.n_retained < 32
    assert covariance.brownian_cov(grid).n_retained == 32


def test_apply():

    rng = np.random.default_rng(0)
    grid = Grid(16)
    C = covariance.brownian_cov(grid)
    f = GridFunction(grid, rng.standard_normal(16))

    # Check against the operator matrix
    assert np.allclose(covariance.apply(C, f).values, C.operator_matrix @ f.values)

    # Square root applied twice
    half = covariance.apply_sqrt(C, covariance.apply_sqrt(C, f))
    assert np.allclose(half.values, covariance.apply(C, f).values)

    # Check the inverse on a full-rank operator
    assert np.allclose(covariance.apply_inv(C, covariance.apply(C, f)).values, f.values)


def test_sample_second_moment():

    # E ||X||^2 = tr(C) for X ~ N(0, C)
    grid = Grid(16)
    C = covariance.brownian_cov(grid)
    X = covariance.sample_gaussian(C, rng=42, n=20000)
    sq = l2_inner(X, X)
    stderr = np.std(sq) / np.sqrt(len(sq))
    assert abs(np.mean(sq) - C.trace) < 4 * stderr

    # Sample covariance matches the kernel
    assert np.allclose(np.cov(X.values.T), C.kernel_matrix, atol=0.05)

    # A mean shifts every draw
    mean = GridFunction(grid, np.ones(16))
    Y = covariance.sample_gaussian(C, mean=mean, rng=42, n=20000)
    assert np.allclose(Y.values - X.values, 1.0)

    # Same seed, same draws
    assert np.array_equal(covariance.sample_gaussian(C, rng=7).values,
                          covariance.sample_gaussian(C, rng=7).values)


def test_empirical_cov():

    rng = np.random.default_rng(3)
    D = 20

    # Fewer samples than grid points: rank N - 1 plus the eps shift
    data = GridFunction(Grid(D), rng.standard_normal((5, D)))
    C = covariance.empirical_cov(data, eps=0.05)
    assert np.sum(C.eigenvalues > 0.05 + 1e-10) <= 4
    assert np.allclose(C.eigenvalues[4:], 0.05)

    # Same spectrum as the direct covariance
    X = data.values - data.values.mean(axis=0)
    direct = covariance.from_operator_matrix(Grid(D), X.T @ X / (5 * D))
    assert np.allclose(C.eigenvalues - 0.05, direct.eigenvalues, atol=1e-10)

    # More samples than grid points
    data = GridFunction(Grid(D), rng.standard_normal((200, D)))
    C = covariance.empirical_cov(data)
    X = data.values - data.values.mean(axis=0)
    assert np.allclose(C.kernel_matrix, X.T @ X / 200, atol=1e-10)

    # Estimates from Karhunen-Loeve draws approach the true operator as N grows
    grid = Grid(8)
    true = covariance.rbf_cov(grid, 0.05)
    draws = covariance.sample_gaussian(true, rng=9, n=50000)
    errors = [np.linalg.norm(covariance.empirical_cov(draws[:n]).operator_matrix
                             - true.operator_matrix)
              for n in [500, 5000, 50000]]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.02


def test_combine_and_scaled():

    grid = Grid(16)
    C = covariance.rbf_cov(grid, 0.1)

    # Commuting combination stays in the same eigenbasis
    S = covariance.combine(C, C, 0.3, 0.7)
    assert np.allclose(S.eigenvalues, C.eigenvalues)
    assert covariance.commuting_diagonal(C.scaled(2.0), C) is not None

    # Non-commuting operators fall back to a fresh eigendecomposition
    B = covariance.brownian_cov(grid)
    S = covariance.combine(C, B, 0.5, 0.5)
    assert np.allclose(S.operator_matrix, 0.5 * (C.operator_matrix + B.operator_matrix),
                       atol=1e-12)

    assert math.isclose(C.scaled(3.0).trace, 3.0 * C.trace)
    with unittest.TestCase().assertRaises(ValueError):
        C.scaled(-1.0)


def test_logpdf_and_measure():

    grid = Grid(4)
    C = covariance.brownian_cov(grid)
    mean = GridFunction(grid, [0.1, 0.2, 0.3, 0.4])
    law = covariance.GaussianMeasure(mean, C)

    # The density peaks at the mean
    x = GridFunction(grid, np.zeros(4))
    assert law.logpdf(mean) > law.logpdf(x)

    # Check against the explicit formula
    K = C.kernel_matrix
    r = x.values - mean.values
    expected = -0.5 * (r @ np.linalg.solve(K, r) + np.linalg.slogdet(2 * np.pi * K)[1])
    assert math.isclose(law.logpdf(x), expected, rel_tol=1e-8)


def test_invalid():

    test = unittest.TestCase()
    grid = Grid(8)
    with test.assertRaises(ValueError):
        covariance.rbf_cov(grid, 0.0)
    with test.assertRaises(ValueError):
        covariance.identity_cov(grid, -1.0)
    with test.assertRaises(NotImplementedError):
        covariance.build_cov('matern', grid, {})
    with test.assertRaises(DimensionError):
        covariance.from_operator_matrix(grid, np.eye(4))
    with test.assertRaises(DimensionError):
        covariance.GaussianMeasure(GridFunction(Grid(4), np.zeros(4)), covariance.brownian_cov(grid))

    # Re-derivation from parameters
    C = covariance.build_cov('rbf', grid, {'lengthscale': 0.2, 'scale': 2.0})
    assert np.allclose(C.eigenvalues, 2.0 * covariance.rbf_cov(grid, 0.2).eigenvalues)
