import unittest

import numpy as np

import infinite_sgm.io as io
from infinite_sgm import __version__
from infinite_sgm.covariance import brownian_cov, empirical_cov, rbf_cov, sample_gaussian
from infinite_sgm.errors import DimensionError
from infinite_sgm.function_space import Grid, GridFunction


def test_csv(tmp_path):

    grid = Grid(5)
    f = GridFunction(grid, [[0.1, 1.0 / 3.0, -2.5, 1e-20, 7.0], [0.0] * 5])
    path = tmp_path / 'f.csv'
    io.write_csv(path, f)
    back = io.read_functions(path)
    assert back.grid == grid and np.array_equal(back.values, f.values)

    # Single functions are written as one row
    io.write_csv(path, f[0])
    assert io.read_csv(path).shape == (1, 5)

    # Empty batches give an empty file
    io.write_csv(path, np.zeros((0, 5)))
    assert path.read_text() == ''
    assert io.read_csv(path, 5).shape == (0, 5)

    test = unittest.TestCase()
    with test.assertRaises(ValueError):
        io.read_functions(path)
    io.write_csv(path, f)
    with test.assertRaises(DimensionError):
        io.read_csv(path, 4)


def test_table_and_sidecar(tmp_path):

    path = tmp_path / 'table.csv'
    io.write_table(path, ['D', 'W2', 'label'], [[16, 0.1, 'a'], [32, 2.0 / 3.0, 'b']])
    lines = path.read_text().splitlines()
    assert lines[0] == 'D,W2,label'
    assert lines[1] == '16,0.10000000000000001,a'
    rows = io.read_table(path)
    assert rows[1]['D'] == '32' and float(rows[1]['W2']) == 2.0 / 3.0

    io.write_sidecar(path, 'sweep', {'dims': [16]}, 3, 'abc', extra=1)
    meta = io.read_json(io.sidecar_path(path))
    assert meta == {'command': 'sweep', 'params': {'dims': [16]}, 'seed': 3,
                    'config_hash': 'abc', 'version': __version__, 'extra': 1}

    assert io.file_sha256(path) == io.file_sha256(path)
    assert len(io.file_sha256(path)) == 64


def test_json_numpy(tmp_path):

    path = tmp_path / 'x.json'
    io.write_json(path, {'a': np.arange(3), 'b': np.float64(0.5), 'c': (1, 2), 'd': np.bool_(True)})
    assert io.read_json(path) == {'a': [0, 1, 2], 'b': 0.5, 'c': [1, 2], 'd': True}
    with unittest.TestCase().assertRaises(TypeError):
        io.write_json(path, {'a': object()})


def test_operator_checkpoint(tmp_path):

    grid = Grid(8)
    f = GridFunction(grid, np.arange(8.0))
    assert np.array_equal(io.grid_function_from_dict(io.grid_function_to_dict(f)).values, f.values)

    # Stored spectra are restored bit for bit
    C = empirical_cov(sample_gaussian(brownian_cov(grid), rng=0, n=20), eps=0.1)
    path = tmp_path / 'cov.json'
    io.save_operator(path, C)
    back = io.load_operator(path)
    assert back.kind == C.kind
    assert np.array_equal(back.eigenvalues, C.eigenvalues)
    assert np.array_equal(back.kernel_matrix, C.kernel_matrix)

    # Parametric kinds may omit the spectrum
    C = io.operator_from_dict({'kind': 'rbf', 'n_points': 8, 'params': {'lengthscale': 0.2}})
    assert np.allclose(C.kernel_matrix, rbf_cov(grid, 0.2).kernel_matrix)
    scaled = io.operator_from_dict({'kind': 'brownian', 'n_points': 8, 'params': {'scale': 2.0}})
    assert np.isclose(scaled.trace, 2.0 * brownian_cov(grid).trace)
    with unittest.TestCase().assertRaises(ValueError):
        io.operator_from_dict({'kind': 'empirical', 'n_points': 8})
