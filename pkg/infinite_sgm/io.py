"""
Files written and read by the command-line runner: CSV matrices, JSON sidecars,
GridFunction and operator checkpoints.
"""
import csv
import hashlib
import json
import logging
import os

import numpy as np

from . import __version__
from .covariance import CovOperator, build_cov
from .errors import DimensionError
from .function_space import Grid, GridFunction

logger = logging.getLogger(__name__)

CSV_FORMAT = '%.17g'
PARAMETRIC_KINDS = ('rbf', 'brownian', 'identity')


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path, obj):
    """Write obj as sorted, indented JSON (numpy arrays become lists)."""
    with open(path, 'w') as f:
        json.dump(obj, f, default=_to_builtin, sort_keys=True, indent=2)
        f.write('\n')


def read_json(path):
    with open(path) as f:
        return json.load(f)


def sidecar_path(path):
    return f"{path}.json"


def write_sidecar(path, command, params, seed, config_hash, **extra):
    """
    Write the JSON sidecar {command, params, seed, config_hash, version, ...} of path.
    """
    meta = {'command': command, 'params': params, 'seed': seed, 'config_hash': config_hash,
            'version': __version__}
    meta.update(extra)
    write_json(sidecar_path(path), meta)


def write_csv(path, values):
    """
    Write one function per row with 17 significant digits.

    Args:
        :path (str): Destination file
        :values (GridFunction or np.ndarray): Single function or batch; an empty batch
            gives an empty file
    """
    values = values.values if isinstance(values, GridFunction) else np.asarray(values, float)
    if values.size == 0:
        values = np.zeros((0, values.shape[-1] if values.ndim == 2 else 0))
    values = np.atleast_2d(values)
    with open(path, 'w') as f:
        if len(values):
            np.savetxt(f, values, fmt=CSV_FORMAT, delimiter=',')
    logger.info("wrote %d rows to %s", len(values), path)


def write_table(path, header, rows):
    """Write a CSV table with a header line; floats use the same 17-digit format."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([CSV_FORMAT % v if isinstance(v, float) else v for v in row])
    logger.info("wrote %d table rows to %s", len(rows), path)


def read_table(path):
    """Read a table written by write_table as a list of dicts of strings."""
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def file_sha256(path):
    with open(path, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def read_csv(path, n_points=None):
    """
    Read a CSV matrix written by write_csv.

    Args:
        :path (str): Source file
        :n_points (int, default=None): Expected number of columns

    Returns:
        :values (np.ndarray): Matrix of shape (n, D); (0, n_points) for an empty file
    """
    if os.path.getsize(path) == 0:
        return np.zeros((0, n_points or 0))
    values = np.loadtxt(path, delimiter=',', ndmin=2)
    if n_points is not None and values.shape[1] != n_points:
        raise DimensionError(f"{path} has {values.shape[1]} columns, expected {n_points}")
    return values


def read_functions(path):
    """Read a CSV matrix as a batch GridFunction on the matching grid."""
    values = read_csv(path)
    if len(values) == 0:
        raise ValueError(f"{path} contains no functions")
    return GridFunction(Grid(values.shape[1]), values)


def grid_function_to_dict(f):
    return {'n_points': f.grid.n_points, 'values': f.values.tolist()}


def grid_function_from_dict(d):
    return GridFunction(Grid(d['n_points']), np.asarray(d['values'], dtype=float))


def operator_to_dict(C):
    """Checkpoint {kind, params, eigenvalues, eigenfunctions, rank_tol, n_points}."""
    return {'kind': C.kind, 'params': dict(C.params), 'n_points': C.grid.n_points,
            'eigenvalues': C.eigenvalues.tolist(), 'eigenfunctions': C.eigenfunctions.tolist(),
            'rank_tol': C.rank_tol}


def operator_from_dict(d):
    """
    Restore an operator; parametric kinds may omit the spectrum and are re-derived.
    """
    grid = Grid(d['n_points'])
    if 'eigenvalues' not in d:
        if d['kind'] not in PARAMETRIC_KINDS:
            raise ValueError(f"operator kind '{d['kind']}' needs its stored spectrum")
        return build_cov(d['kind'], grid, d.get('params', {}))
    return CovOperator(grid, np.asarray(d['eigenvalues'], dtype=float),
                       np.asarray(d['eigenfunctions'], dtype=float),
                       d.get('rank_tol', 1e-12), d.get('kind', 'matrix'), d.get('params', {}))


def save_operator(path, C):
    write_json(path, operator_to_dict(C))
    logger.info("wrote %s operator checkpoint to %s", C.kind, path)


def load_operator(path):
    return operator_from_dict(read_json(path))
