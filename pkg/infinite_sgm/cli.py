"""
Command-line runner: infinite-sgm {gen-data, train, sample, condition, dim-sweep, report}.

Every command reads one TOML config (plus --seed/--out/--threads overrides), writes its
outputs into the output directory and puts a JSON sidecar next to every file. Exit codes:
0 success, 2 configuration or input error (including unreadable or unwritable files),
3 numerical failure.
"""
import argparse
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .conditioning import (GuidanceConfig, endpoint_observation, feasibility, gaussian_posterior,
                           guided_sample, load_observation, mean_error)
from .config import config_hash, load_config, with_overrides
from .covariance import (GaussianMeasure, brownian_cov, empirical_cov, identity_cov, rbf_cov)
from .datasets import (DoubleWellSpec, bridge_reference, gen_double_well_paths, gen_gp_rbf,
                       transition_fraction)
from .errors import ConfigError, NumericalError, SingularOperatorError
from .function_space import L2, Grid, GridFunction
from .io import (file_sha256, load_operator, read_functions, read_json, save_operator, write_csv,
                 write_json, write_sidecar, write_table)
from .metrics import (empirical_gaussian, metric_row, overlap_coefficient, qv_location_test,
                      quadratic_variation, sliced_w2, spectrum_compare, w2_gaussian)
from .reverse_sampler import gaussian_output_law, make_schedule, sample
from .score_model import TrainConfig
from .score_oracle import gaussian_score_fn, oracle_score_fn, stationary_target

logger = logging.getLogger(__name__)

# independent random streams per purpose, all derived from the run seed
STREAM_DATA, STREAM_TRAIN, STREAM_SAMPLE, STREAM_FLOOR = 0, 1, 2, 3
STREAM_GUIDED, STREAM_COMPARE, STREAM_SWEEP, STREAM_REFERENCE, STREAM_METRICS = 4, 5, 6, 7, 8

SCORE_ERROR_TIMES = (0.1, 0.5, 1.0, 2.0)
SWEEP_HEADER = ('noise', 'D', 'n_steps', 'W2', 'W2_normalized', 'runtime')


def _rng(cfg, stream):
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(stream,)))


def _path(cfg, name):
    return os.path.join(cfg.out, name)


def _sidecar(cfg, path, command, params, **extra):
    write_sidecar(path, command, params, cfg.seed, config_hash(cfg), **extra)


def _double_well(cfg):
    d = cfg.data
    spec = DoubleWellSpec(d.a, d.diffusion, d.substeps)
    if d.init == 'stationary':
        return spec, 'stationary'
    try:
        return spec, float(d.init)
    except ValueError:
        raise ConfigError(f"data.init must be 'stationary' or a number, got {d.init!r}") from None


def _data_target(cfg, grid):
    """The Gaussian law N(0, C_rbf) of the gp_rbf generator."""
    d = cfg.data
    if d.generator != 'gp_rbf':
        return None
    return GaussianMeasure(GridFunction.zeros(grid), rbf_cov(grid, d.lengthscale, d.variance))


def _noise_cov(cfg, grid, data=None):
    c = cfg.covariance
    if c.kind == 'rbf':
        return rbf_cov(grid, c.lengthscale, c.variance, c.rank_tol)
    if c.kind == 'brownian':
        return brownian_cov(grid, c.rank_tol)
    if c.kind == 'identity':
        return identity_cov(grid, c.eigenvalue, c.rank_tol)
    if data is None:
        data = read_functions(_path(cfg, cfg.train.data))
    return empirical_cov(data, c.eps, c.rank_tol)


def _drift(cfg):
    """
    The reverse drift selected by [sampler].

    Returns:
        :drift (ScoreFn): Oracle or learned drift
        :C (CovOperator): Noise covariance
        :target (GaussianMeasure): Law the samples are compared with, or None
        :info (dict): Provenance recorded in sidecars
    """
    s = cfg.sampler
    if s.drift == 'oracle':
        grid = Grid(cfg.data.n_points)
        C = _noise_cov(cfg, grid)
        if s.oracle == 'stationary':
            target = stationary_target(C)
        else:
            target = _data_target(cfg, grid)
            if target is None:
                raise ConfigError("sampler.oracle = 'data' needs the gp_rbf generator")
        return oracle_score_fn(target, C), C, target, {'drift': 'oracle', 'oracle': s.oracle}

    try:
        from .pytorch.score_model import as_score_fn, load_checkpoint
    except ImportError as err:
        raise ConfigError(f"sampler.drift = 'learned' needs torch: {err}") from err
    ckpt = _path(cfg, s.checkpoint)
    net, meta = load_checkpoint(ckpt)
    C = load_operator(os.path.join(os.path.dirname(ckpt), meta['C_ref']))
    drift = as_score_fn(net, t_min=meta['t_min'])
    info = {'drift': 'learned', 'checkpoint': s.checkpoint,
            'checkpoint_sha256': file_sha256(ckpt), 'parameterization': meta['parameterization']}
    return drift, C, _data_target(cfg, C.grid), info


def _schedule(cfg, n_steps=None, last_step_denoise=None):
    s = cfg.sampler
    return make_schedule(s.n_steps if n_steps is None else n_steps, cfg.forward.T,
                         cfg.forward.t_min, s.spacing,
                         s.last_step_denoise if last_step_denoise is None else last_step_denoise,
                         s.variant)


def _qv_stats(values):
    return {'mean': float(np.mean(values)), 'std': float(np.std(values)),
            'stderr': float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1
            else float('nan')}


def cmd_gen_data(cfg, args):
    """Generate the training set and the held-out reference set."""
    d = cfg.data
    rng = _rng(cfg, STREAM_DATA)
    n_total = d.n + d.n_heldout
    if d.generator == 'gp_rbf':
        funcs = gen_gp_rbf(n_total, d.n_points, d.lengthscale, rng, d.variance)
    else:
        spec, init = _double_well(cfg)
        funcs = gen_double_well_paths(n_total, d.n_points, spec, init, rng)
    train, heldout = funcs[:d.n], funcs[d.n:]

    stats = {}
    if d.n_points >= 2:
        stats['qv'] = _qv_stats(quadratic_variation(train))
    if d.generator == 'double_well':
        stats['transition_fraction'] = transition_fraction(train)
    logger.info("generated %d + %d %s functions on %d points", d.n, d.n_heldout,
                d.generator, d.n_points)

    for name, batch in ((d.path, train), (cfg.metrics.reference, heldout)):
        path = _path(cfg, name)
        write_csv(path, batch)
        _sidecar(cfg, path, 'gen-data', asdict(d), generator=d.generator, n_rows=len(batch),
                 stats=stats)
    return 0


def cmd_train(cfg, args):
    """Fit a score network on the generated data."""
    try:
        from .pytorch.score_model import as_score_fn, save_checkpoint, score_relative_error, train
    except ImportError as err:
        raise ConfigError(f"train needs torch: {err}") from err
    tr = cfg.train
    data = read_functions(_path(cfg, tr.data))
    C = _noise_cov(cfg, data.grid, data)
    tc = TrainConfig(loss_kind=tr.loss_kind, loss_norm=None if tr.loss_norm == 'cm' else L2(),
                     n_epochs=tr.n_epochs, batch_size=tr.batch_size, lr=tr.lr,
                     optimizer=tr.optimizer, n_time_steps=tr.n_time_steps or None,
                     t_min=cfg.forward.t_min, T=cfg.forward.T,
                     seed=int(np.random.SeedSequence(cfg.seed, spawn_key=(STREAM_TRAIN,))
                              .generate_state(1)[0]),
                     hidden=tuple(cfg.model.hidden), n_freqs=cfg.model.n_freqs,
                     holdout_fraction=tr.holdout_fraction, progress=args.progress)
    net, report = train(data, C, tc)

    cov_path = _path(cfg, 'cov.json')
    save_operator(cov_path, C)
    _sidecar(cfg, cov_path, 'train', asdict(cfg.covariance))
    model_path = _path(cfg, 'model.json')
    save_checkpoint(net, model_path, cfg.forward.t_min, C_ref='cov.json')
    _sidecar(cfg, model_path, 'train', asdict(tr), arch=net.arch)

    result = {'command': 'train', 'config_hash': config_hash(cfg), 'loss': report.to_dict()}
    target = _data_target(cfg, data.grid)
    if target is not None:
        errors = score_relative_error(as_score_fn(net, t_min=cfg.forward.t_min),
                                      gaussian_score_fn(target, C), C, SCORE_ERROR_TIMES,
                                      n_test=500, rng=_rng(cfg, STREAM_METRICS), target=target)
        result['score_error'] = errors
        logger.info("relative score error against the oracle: %.4f", errors['mean'])
    report_path = _path(cfg, 'loss_report.json')
    write_json(report_path, result)
    _sidecar(cfg, report_path, 'train', asdict(tr))
    return 0


def _sample_metrics(cfg, samples, C, target, drift_info, sched):
    h = config_hash(cfg)
    m = cfg.metrics
    rows = []
    D = samples.grid.n_points
    if target is not None and len(samples) >= 2:
        w2 = w2_gaussian(empirical_gaussian(samples), target)
        exact = target.sample(_rng(cfg, STREAM_FLOOR), len(samples))
        floor = w2_gaussian(empirical_gaussian(exact), target)
        bound = 0.05 * np.sqrt(target.cov.trace)
        rows += [metric_row('w2_gaussian', w2, None, h),
                 metric_row('w2_sampling_floor', floor, None, h),
                 metric_row('w2_bound', bound, None, h),
                 metric_row('w2_within_bound', bool(w2 <= bound + floor), None, h)]
        if drift_info['drift'] == 'oracle':
            law = gaussian_output_law(target, C, sched)
            rows.append(metric_row('w2_exact_law', w2_gaussian(law, target), None, h))

    reference = None
    ref_path = _path(cfg, m.reference)
    if os.path.exists(ref_path) and os.path.getsize(ref_path) > 0:
        reference = read_functions(ref_path)
        if reference.grid != samples.grid:
            logger.warning("reference %s lives on %d points, samples on %d; skipping",
                           ref_path, reference.grid.n_points, D)
            reference = None
    else:
        logger.warning("no reference data at %s; skipping sliced W2", ref_path)

    if reference is not None:
        sw = sliced_w2(samples, reference, m.n_proj, _rng(cfg, STREAM_METRICS))
        rows.append(metric_row('sliced_w2', sw.value, sw.stderr, h))

    qv = None
    if D >= 2:
        qv = quadratic_variation(samples)
        stats = _qv_stats(qv)
        rows.append(metric_row('qv_mean', stats['mean'], stats['stderr'], h))
        if reference is not None and len(samples) >= 2 and len(reference) >= 2:
            rows.append(metric_row('qv_location_test',
                                   qv_location_test(qv, quadratic_variation(reference),
                                                    m.qv_alpha), None, h))

    spectrum_target = target.cov if target is not None else (
        empirical_cov(reference) if reference is not None and len(reference) >= 2 else None)
    if spectrum_target is not None and len(samples) >= 2:
        rows.append(metric_row('spectrum_compare',
                               spectrum_compare(samples, spectrum_target, min(m.k_spectrum, D)),
                               None, h))

    if cfg.plot:
        from .plotting import plot_qv_histograms, plot_samples
        plot_samples(samples, _path(cfg, 'samples.png'))
        if qv is not None:
            hists = {'samples': qv}
            if reference is not None:
                hists['reference'] = quadratic_variation(reference)
            plot_qv_histograms(hists, _path(cfg, 'qv.png'))
    return rows


def cmd_sample(cfg, args):
    """Run the reverse sampler and evaluate the samples."""
    s = cfg.sampler
    drift, C, target, info = _drift(cfg)
    sched = _schedule(cfg)
    samples = sample(drift, C, sched, s.n_samples, _rng(cfg, STREAM_SAMPLE), args.progress)

    path = _path(cfg, 'samples.csv')
    write_csv(path, samples)
    _sidecar(cfg, path, 'sample', asdict(s), schedule=sched.to_dict(), variant=s.variant,
             covariance=C.kind, **info)
    if len(samples) == 0:
        return 0

    rows = _sample_metrics(cfg, samples, C, target, info, sched)
    if drift.diagnostics.get('t_clamped'):
        rows.append(metric_row('t_clamped', drift.diagnostics['t_clamped'], None,
                               config_hash(cfg)))
    metrics_path = _path(cfg, 'metrics.json')
    write_json(metrics_path, {'command': 'sample', 'config_hash': config_hash(cfg), 'rows': rows})
    _sidecar(cfg, metrics_path, 'sample', asdict(cfg.metrics))
    return 0


def _observation(cfg, grid):
    cc = cfg.conditioning
    if cc.observation:
        return load_observation(_path(cfg, cc.observation), grid)
    return endpoint_observation(grid, cc.start, cc.end, cc.noise_std)


def _guided_summary(samples, obs, posterior):
    summary = feasibility(samples, obs)
    if posterior is not None and len(samples):
        summary['mean_error'] = mean_error(samples, posterior.mean)
    return summary


def _bridge_summary(cfg, samples):
    cc = cfg.conditioning
    if cfg.data.generator != 'double_well':
        raise ConfigError("conditioning.n_reference needs the double_well generator")
    spec, init = _double_well(cfg)
    grid = samples.grid
    paths = gen_double_well_paths(cc.n_reference, grid.n_points, spec, init,
                                  _rng(cfg, STREAM_REFERENCE))
    start_band = (cc.start - 0.5, cc.start + 0.5)
    end_band = (cc.end - 0.5, cc.end + 0.5)
    reference = bridge_reference(paths, start_band, end_band)
    first, last = samples.values[:, 0], samples.values[:, -1]
    hits = ((first > start_band[0]) & (first < start_band[1])
            & (last > end_band[0]) & (last < end_band[1]))
    mid = grid.index_of(0.5)
    overlap = (overlap_coefficient(samples.values[:, mid], reference.values[:, mid])
               if len(reference) else None)
    return {'n_reference': len(reference), 'endpoint_fraction': float(np.mean(hits)),
            'midpoint_overlap': overlap}


def cmd_condition(cfg, args):
    """Guided sampling with a paired comparison of the two projections."""
    cc = cfg.conditioning
    n = cfg.sampler.n_samples
    drift, C, target, info = _drift(cfg)
    obs = _observation(cfg, C.grid)
    sched = _schedule(cfg)
    posterior = gaussian_posterior(target, obs) if target is not None else None

    g = GuidanceConfig(cc.projection, cc.lam, cc.apply_every)
    samples = guided_sample(drift, C, sched, obs, g, n, _rng(cfg, STREAM_GUIDED), args.progress)
    path = _path(cfg, 'guided.csv')
    write_csv(path, samples)
    _sidecar(cfg, path, 'condition', asdict(cc), guidance=g.to_dict(),
             observation={'A': obs.A, 'y': obs.y, 'noise_cov': obs.noise_cov},
             schedule=sched.to_dict(), **info)
    if len(samples) == 0:
        return 0

    h = config_hash(cfg)
    rows = [metric_row('guided', _guided_summary(samples, obs, posterior), None, h)]
    if cc.compare:
        for projection in ('H', 'U'):
            paired = guided_sample(drift, C, sched, obs,
                                   GuidanceConfig(projection, cc.lam, cc.apply_every), n,
                                   _rng(cfg, STREAM_COMPARE))
            rows.append(metric_row(f'projection_{projection}',
                                   _guided_summary(paired, obs, posterior), None, h))
    if cc.lam_sweep:
        sweep = []
        for lam in cc.lam_sweep:
            out = guided_sample(drift, C, sched, obs,
                                GuidanceConfig(cc.projection, lam, cc.apply_every), n,
                                _rng(cfg, STREAM_SWEEP))
            sweep.append({'lam': lam, **_guided_summary(out, obs, posterior)})
        rows.append(metric_row('lam_sweep', sweep, None, h))
    if cc.n_reference > 0:
        rows.append(metric_row('bridge', _bridge_summary(cfg, samples), None, h))

    if cfg.plot:
        from .plotting import plot_samples
        plot_samples(samples, _path(cfg, 'guided.png'), title=f"{cc.projection}-projection")
    report_path = _path(cfg, 'condition_report.json')
    write_json(report_path, {'command': 'condition', 'config_hash': h, 'rows': rows})
    _sidecar(cfg, report_path, 'condition', asdict(cc))
    return 0


def _sweep_target(grid, amplitude):
    mean = GridFunction.from_callable(grid, lambda t: amplitude * np.sin(np.pi * t))
    return GaussianMeasure(mean, brownian_cov(grid))


def _log_slope(n_steps, w2):
    n_steps, w2 = np.asarray(n_steps, dtype=float), np.asarray(w2, dtype=float)
    if len(n_steps) < 2 or np.any(w2 <= 0):
        return None
    return float(-np.polyfit(np.log(n_steps), np.log(w2), 1)[0])


def cmd_dim_sweep(cfg, args):
    """
    Exact output-law W2 of the oracle-drift sampler over grid sizes and step counts,
    once with the target's own covariance as noise and once with the identity.
    """
    sw = cfg.sweep
    rows = []
    summary = {}
    for noise in sw.noises:
        per_dim = {}
        for D in sw.dims:
            grid = Grid(int(D))
            target = _sweep_target(grid, sw.amplitude)
            C = target.cov if noise == 'matched' else identity_cov(grid, sw.identity_eigenvalue)
            scale = np.sqrt(target.cov.trace)
            w2s = []
            for n in sw.n_steps:
                start = time.perf_counter()
                law = gaussian_output_law(target, C, _schedule(cfg, int(n), sw.last_step_denoise))
                w2 = w2_gaussian(law, target)
                runtime = time.perf_counter() - start if sw.timing else 0.0
                rows.append((noise, int(D), int(n), w2, w2 / scale, runtime))
                w2s.append(w2)
                logger.info("%s noise, D = %d, %d steps: W2 = %.5e", noise, D, n, w2)
            per_dim[int(D)] = {'w2': w2s, 'monotone': bool(np.all(np.diff(w2s) < 0)),
                               'slope': _log_slope(sw.n_steps, w2s)}
        finest = [r[4] for r in rows if r[0] == noise and r[2] == int(sw.n_steps[-1])]
        summary[noise] = {'per_dim': per_dim,
                          'normalized_spread': float((max(finest) - min(finest)) / np.mean(finest))}

    path = _path(cfg, 'dim_sweep.csv')
    write_table(path, SWEEP_HEADER, rows)
    _sidecar(cfg, path, 'dim-sweep', asdict(sw))
    summary_path = _path(cfg, 'sweep_summary.json')
    write_json(summary_path, {'command': 'dim-sweep', 'config_hash': config_hash(cfg),
                              'n_steps': list(sw.n_steps), 'summary': summary})
    _sidecar(cfg, summary_path, 'dim-sweep', asdict(sw))
    return 0


def _format_value(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (dict, list)):
        return f"`{value}`" if len(str(value)) < 80 else "(see JSON)"
    return str(value)


def cmd_report(cfg, args):
    """Collect JSON outputs into report.json and report.md, grouped by command."""
    inputs = list(args.inputs) if args.inputs else list(cfg.report.inputs)
    groups = {}
    problems = []
    for path in inputs:
        if not os.path.exists(path):
            problems.append({'path': path, 'error': 'missing'})
            continue
        try:
            content = read_json(path)
        except ValueError as err:
            problems.append({'path': path, 'error': f'unreadable: {err}'})
            continue
        command = content.get('command', 'other') if isinstance(content, dict) else 'other'
        groups.setdefault(command, []).append({'path': path, 'content': content})
    for problem in problems:
        logger.warning("report: %s is %s", problem['path'], problem['error'])

    lines = [f"# {cfg.report.title}", ""]
    if not inputs:
        lines.append("No inputs.")
    for command in sorted(groups):
        lines += [f"## {command}", ""]
        for entry in groups[command]:
            lines += [f"### {entry['path']}", ""]
            rows = entry['content'].get('rows') if isinstance(entry['content'], dict) else None
            if rows:
                lines += ["| metric | value | stderr |", "| --- | --- | --- |"]
                lines += [f"| {r['metric']} | {_format_value(r['value'])} | "
                          f"{_format_value(r['stderr'])} |" for r in rows]
            else:
                lines.append("(no metric rows; see report.json)")
            lines.append("")
    if problems:
        lines += ["## Problems", ""]
        lines += [f"- {p['path']}: {p['error']}" for p in problems]

    md_path = _path(cfg, 'report.md')
    with open(md_path, 'w') as f:
        f.write("\n".join(lines).rstrip() + "\n")
    json_path = _path(cfg, 'report.json')
    write_json(json_path, {'command': 'report', 'title': cfg.report.title, 'groups': groups,
                           'problems': problems})
    _sidecar(cfg, json_path, 'report', asdict(cfg.report), inputs=inputs)
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'sample': cmd_sample,
    'condition': cmd_condition,
    'dim-sweep': cmd_dim_sweep,
    'report': cmd_report,
}


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help="TOML configuration file")
    common.add_argument('--seed', type=int, default=None, help="Run seed (unsigned 64-bit)")
    common.add_argument('--out', default=None, help="Output directory")
    common.add_argument('--threads', type=int, default=None, help="Cap on torch threads")
    common.add_argument('-v', '--verbose', action='store_true', help="Debug logging")
    common.add_argument('-q', '--quiet', action='store_true', help="Warnings only, no progress")

    parser = argparse.ArgumentParser(prog='infinite-sgm',
                                     description="Function-space score-based diffusion")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=func.__doc__.strip().splitlines()[0])
        p.set_defaults(func=func)
        if name == 'report':
            p.add_argument('inputs', nargs='*', help="JSON files to collect")
    return parser


def _set_threads(n):
    if n <= 0:
        return
    try:
        import torch
    except ImportError:
        logger.debug("torch not installed; --threads only affects torch")
        return
    torch.set_num_threads(n)


def main(argv=None):
    args = make_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args.progress = not args.quiet
    try:
        cfg = with_overrides(load_config(args.config), args.seed, args.out, args.threads)
        if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg.seed!r}")
        _set_threads(cfg.threads)
        os.makedirs(cfg.out, exist_ok=True)
        return args.func(cfg, args)
    except (NumericalError, SingularOperatorError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        logger.error("numerical failure: %s", err)
        return 3
    except (ConfigError, ValueError, NotImplementedError) as err:
        logger.error("configuration error: %s", err)
        return 2
    except OSError as err:
        logger.error("cannot read or write: %s", err)
        return 2


if __name__ == '__main__':
    sys.exit(main())
