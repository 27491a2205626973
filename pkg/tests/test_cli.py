import json

import numpy as np
import pytest

import infinite_sgm.cli as cli
from infinite_sgm.io import read_csv, read_json, read_table, sidecar_path, write_csv

SMALL = """
seed = 5

[data]
generator = "gp_rbf"
n = 60
n_heldout = 40
n_points = 8
lengthscale = 0.2

[covariance]
kind = "brownian"

[sampler]
n_steps = 20
n_samples = 50
oracle = "data"

[conditioning]
lam_sweep = [1.0, 0.5]
"""


def _config(tmp_path, text=SMALL, name='exp.toml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(command, config, out, *extra):
    return cli.main([command, '--config', config, '--out', str(out), '-q', *extra])


def test_gen_data(tmp_path):

    config = _config(tmp_path)
    assert _run('gen-data', config, tmp_path / 'a') == 0
    data = read_csv(tmp_path / 'a' / 'data.csv')
    heldout = read_csv(tmp_path / 'a' / 'heldout.csv')
    assert data.shape == (60, 8) and heldout.shape == (40, 8)

    meta = read_json(sidecar_path(str(tmp_path / 'a' / 'data.csv')))
    assert meta['command'] == 'gen-data' and meta['seed'] == 5 and meta['n_rows'] == 60
    assert meta['stats']['qv']['mean'] > 0

    # Same seed, same bytes; another seed, other data
    assert _run('gen-data', config, tmp_path / 'b') == 0
    assert (tmp_path / 'a' / 'data.csv').read_bytes() == (tmp_path / 'b' / 'data.csv').read_bytes()
    assert _run('gen-data', config, tmp_path / 'c', '--seed', '6') == 0
    assert (tmp_path / 'a' / 'data.csv').read_bytes() != (tmp_path / 'c' / 'data.csv').read_bytes()


def test_gen_double_well(tmp_path):

    config = _config(tmp_path, '[data]\ngenerator = "double_well"\nn = 20\nn_heldout = 0\n'
                               'n_points = 32\ninit = "-1.0"\n')
    assert _run('gen-data', config, tmp_path) == 0
    meta = read_json(sidecar_path(str(tmp_path / 'data.csv')))
    assert 0.0 <= meta['stats']['transition_fraction'] <= 1.0
    assert (tmp_path / 'heldout.csv').read_text() == ''


def test_sample(tmp_path):

    config = _config(tmp_path)
    assert _run('gen-data', config, tmp_path) == 0
    assert _run('sample', config, tmp_path) == 0
    assert read_csv(tmp_path / 'samples.csv').shape == (50, 8)

    meta = read_json(sidecar_path(str(tmp_path / 'samples.csv')))
    assert meta['variant'] == 'classical' and meta['drift'] == 'oracle'
    assert meta['schedule']['n_steps'] == 20

    report = read_json(tmp_path / 'metrics.json')
    assert report['command'] == 'sample'
    names = [row['metric'] for row in report['rows']]
    for name in ['w2_gaussian', 'w2_sampling_floor', 'w2_exact_law', 'sliced_w2', 'qv_mean',
                 'qv_location_test', 'spectrum_compare']:
        assert name in names


def test_sample_edge_cases(tmp_path):

    config = _config(tmp_path, SMALL.replace('n_samples = 50', 'n_samples = 0'))
    with pytest.warns(UserWarning):
        assert _run('sample', config, tmp_path) == 0
    assert (tmp_path / 'samples.csv').read_text() == ''
    assert not (tmp_path / 'metrics.json').exists()

    # Configuration errors exit with 2
    assert _run('sample', _config(tmp_path, '[sampler]\nn_step = 3\n', 'bad.toml'), tmp_path) == 2
    assert _run('sample', config, tmp_path, '--seed', '-1') == 2
    assert _run('sample', _config(tmp_path, '[data]\ngenerator = "double_well"\n'
                                            '[sampler]\noracle = "data"\n', 'dw.toml'),
                tmp_path) == 2


def test_condition(tmp_path):

    config = _config(tmp_path)
    assert _run('condition', config, tmp_path) == 0
    assert read_csv(tmp_path / 'guided.csv').shape == (50, 8)
    meta = read_json(sidecar_path(str(tmp_path / 'guided.csv')))
    assert meta['guidance']['projection'] == 'U'
    assert np.allclose(meta['observation']['y'], [-1.0, 1.0])

    report = read_json(tmp_path / 'condition_report.json')
    rows = {row['metric']: row['value'] for row in report['rows']}
    assert set(rows) == {'guided', 'projection_H', 'projection_U', 'lam_sweep'}
    assert 'mean_error' in rows['guided']
    assert [entry['lam'] for entry in rows['lam_sweep']] == [1.0, 0.5]

    # Bridge references need double-well paths
    bridge = _config(tmp_path, SMALL + 'n_reference = 10\n', 'bridge.toml')
    assert _run('condition', bridge, tmp_path) == 2


def test_condition_rank_deficient(tmp_path):

    obs = {'rows': [{'kind': 'eval', 'at': 0.5}, {'kind': 'eval', 'at': 0.5}], 'y': [0.0, 1.0]}
    (tmp_path / 'obs.json').write_text(json.dumps(obs))
    config = _config(tmp_path, SMALL + 'observation = "obs.json"\n')
    assert _run('condition', config, tmp_path) == 3


def test_dim_sweep(tmp_path):

    text = ('[sweep]\ndims = [8]\nn_steps = [10]\nnoises = ["matched"]\ntiming = false\n'
            '[forward]\nT = 5.0\n')
    config = _config(tmp_path, text)
    assert _run('dim-sweep', config, tmp_path / 'a') == 0
    rows = read_table(tmp_path / 'a' / 'dim_sweep.csv')
    assert len(rows) == 1
    assert rows[0]['noise'] == 'matched' and rows[0]['D'] == '8' and rows[0]['runtime'] == '0'
    assert float(rows[0]['W2']) > 0

    assert _run('dim-sweep', config, tmp_path / 'b') == 0
    assert ((tmp_path / 'a' / 'dim_sweep.csv').read_bytes()
            == (tmp_path / 'b' / 'dim_sweep.csv').read_bytes())

    summary = read_json(tmp_path / 'a' / 'sweep_summary.json')
    assert summary['summary']['matched']['normalized_spread'] == 0.0


def test_report(tmp_path):

    config = _config(tmp_path)
    assert _run('report', config, tmp_path / 'empty') == 0
    assert 'No inputs.' in (tmp_path / 'empty' / 'report.md').read_text()

    assert _run('dim-sweep', _config(tmp_path, '[sweep]\ndims = [4]\nn_steps = [5]\n', 's.toml'),
                tmp_path) == 0
    assert _run('gen-data', config, tmp_path) == 0
    assert _run('sample', config, tmp_path) == 0
    inputs = [str(tmp_path / 'metrics.json'), str(tmp_path / 'sweep_summary.json'),
              str(tmp_path / 'missing.json')]
    assert _run('report', config, tmp_path / 'rep', *inputs) == 0

    report = read_json(tmp_path / 'rep' / 'report.json')
    assert sorted(report['groups']) == ['dim-sweep', 'sample']
    assert report['problems'] == [{'path': inputs[2], 'error': 'missing'}]
    text = (tmp_path / 'rep' / 'report.md').read_text()
    assert '## sample' in text and '## Problems' in text and '| w2_gaussian |' in text


def test_train_and_learned_sample(tmp_path):

    pytest.importorskip('torch')
    text = SMALL + ('[model]\nhidden = [16]\nn_freqs = 2\n'
                    '[train]\nn_epochs = 2\nbatch_size = 16\n')
    text = text.replace('oracle = "data"', 'oracle = "data"\ndrift = "learned"')
    config = _config(tmp_path, text)
    assert _run('gen-data', config, tmp_path) == 0
    assert _run('train', config, tmp_path) == 0
    report = read_json(tmp_path / 'loss_report.json')
    assert report['command'] == 'train' and 'score_error' in report
    assert read_json(tmp_path / 'model.json')['C_ref'] == 'cov.json'

    assert _run('sample', config, tmp_path) == 0
    meta = read_json(sidecar_path(str(tmp_path / 'samples.csv')))
    assert meta['drift'] == 'learned' and len(meta['checkpoint_sha256']) == 64


def test_condition_bridge(tmp_path):

    text = ('seed = 3\n[data]\ngenerator = "double_well"\nn_points = 32\n'
            '[covariance]\nkind = "brownian"\n[sampler]\nn_steps = 50\nn_samples = 200\n'
            '[conditioning]\ncompare = false\nlam_sweep = []\nn_reference = 400\n')
    config = _config(tmp_path, text)
    assert _run('condition', config, tmp_path) == 0
    report = read_json(tmp_path / 'condition_report.json')
    rows = {row['metric']: row['value'] for row in report['rows']}
    assert set(rows) == {'guided', 'bridge'}

    bridge = rows['bridge']
    assert bridge['endpoint_fraction'] >= 0.9
    assert bridge['n_reference'] > 0
    assert 0.0 <= bridge['midpoint_overlap'] <= 1.0


def test_exit_codes(tmp_path):

    config = _config(tmp_path)

    # Unreadable inputs and unwritable outputs are input errors
    missing = _config(tmp_path, SMALL + 'observation = "missing.json"\n', 'missing.toml')
    assert _run('condition', missing, tmp_path) == 2
    (tmp_path / 'taken').write_text('')
    assert _run('gen-data', config, tmp_path / 'taken') == 2

    # Non-finite values read back from disk are numerical failures
    assert _run('gen-data', config, tmp_path) == 0
    values = read_csv(tmp_path / 'heldout.csv')
    values[0, 0] = np.nan
    write_csv(tmp_path / 'heldout.csv', values)
    assert _run('sample', config, tmp_path) == 3
