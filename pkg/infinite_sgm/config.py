"""
Experiment configuration: one TOML table per section, each mapped to a frozen dataclass.

Unknown sections or keys are errors. Top-level keys seed, out, threads and plot hold
run-wide settings that the command-line flags override.
"""
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _choice(name, value, options):
    if value not in options:
        raise ConfigError(f"{name} = {value!r} is not one of {', '.join(map(str, options))}")


@dataclass(frozen=True)
class DataConfig:
    generator: str = 'gp_rbf'
    n: int = 2000
    n_heldout: int = 500
    n_points: int = 64
    lengthscale: float = 0.05
    variance: float = 1.0
    init: str = 'stationary'
    a: float = 2.5
    diffusion: float = 1.4142135623730951
    substeps: int = 10
    path: str = 'data.csv'

    def validate(self):
        _choice('data.generator', self.generator, ('gp_rbf', 'double_well'))
        if self.n < 1 or self.n_points < 1 or self.n_heldout < 0:
            raise ConfigError("data.n and data.n_points must be positive")


@dataclass(frozen=True)
class CovarianceConfig:
    kind: str = 'rbf'
    lengthscale: float = 0.05
    variance: float = 1.0
    eigenvalue: float = 1.0
    eps: float = 0.05
    rank_tol: float = 1e-12

    def validate(self):
        _choice('covariance.kind', self.kind, ('rbf', 'brownian', 'identity', 'empirical'))


@dataclass(frozen=True)
class ForwardConfig:
    t_min: float = 1e-3
    T: float = 10.0

    def validate(self):
        if not 0 < self.t_min < self.T:
            raise ConfigError("forward: need 0 < t_min < T")


@dataclass(frozen=True)
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256, 256, 256])
    n_freqs: int = 16

    def validate(self):
        if not self.hidden or any(int(h) < 1 for h in self.hidden) or self.n_freqs < 1:
            raise ConfigError("model: hidden widths and n_freqs must be positive")


@dataclass(frozen=True)
class TrainSection:
    loss_kind: str = 'relative'
    loss_norm: str = 'cm'
    n_epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = 'rmsprop'
    n_time_steps: int = 0
    holdout_fraction: float = 0.1
    data: str = 'data.csv'

    def validate(self):
        _choice('train.loss_kind', self.loss_kind, ('absolute', 'relative'))
        _choice('train.loss_norm', self.loss_norm, ('cm', 'l2'))
        _choice('train.optimizer', self.optimizer, ('rmsprop', 'adam'))


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 200
    spacing: str = 'uniform'
    last_step_denoise: bool = True
    variant: str = 'classical'
    n_samples: int = 2000
    drift: str = 'oracle'
    oracle: str = 'stationary'
    checkpoint: str = 'model.json'

    def validate(self):
        _choice('sampler.spacing', self.spacing, ('uniform', 'geometric'))
        _choice('sampler.variant', self.variant, ('classical', 'relative'))
        _choice('sampler.drift', self.drift, ('oracle', 'learned'))
        _choice('sampler.oracle', self.oracle, ('stationary', 'data'))
        if self.n_steps < 1 or self.n_samples < 0:
            raise ConfigError("sampler: n_steps must be positive and n_samples non-negative")


@dataclass(frozen=True)
class ConditioningConfig:
    projection: str = 'U'
    lam: float = 0.2
    apply_every: int = 1
    observation: str = ''
    start: float = -1.0
    end: float = 1.0
    noise_std: float = 0.1
    compare: bool = True
    lam_sweep: list = field(default_factory=lambda: [1.0, 0.8, 0.5, 0.2])
    n_reference: int = 0

    def validate(self):
        _choice('conditioning.projection', self.projection, ('H', 'U'))
        if not 0 <= self.lam <= 1 or any(not 0 <= x <= 1 for x in self.lam_sweep):
            raise ConfigError("conditioning: lam values must lie in [0, 1]")


@dataclass(frozen=True)
class MetricsConfig:
    n_proj: int = 128
    k_spectrum: int = 5
    qv_alpha: float = 0.05
    reference: str = 'heldout.csv'

    def validate(self):
        if self.n_proj < 1 or self.k_spectrum < 0:
            raise ConfigError("metrics: n_proj must be positive and k_spectrum non-negative")


@dataclass(frozen=True)
class SweepConfig:
    dims: list = field(default_factory=lambda: [16, 64, 256])
    n_steps: list = field(default_factory=lambda: [25, 50, 100, 200])
    amplitude: float = 1.0
    last_step_denoise: bool = False
    identity_eigenvalue: float = 1.0
    timing: bool = True
    noises: list = field(default_factory=lambda: ['matched', 'identity'])

    def validate(self):
        if not self.dims or not self.n_steps or not self.noises:
            raise ConfigError("sweep: dims, n_steps and noises must be non-empty")
        for noise in self.noises:
            _choice('sweep.noises', noise, ('matched', 'identity'))


@dataclass(frozen=True)
class ReportConfig:
    inputs: list = field(default_factory=list)
    title: str = 'Experiment report'

    def validate(self):
        if not isinstance(self.inputs, list) or not all(isinstance(p, str) for p in self.inputs):
            raise ConfigError("report.inputs must be a list of paths")
        if not isinstance(self.title, str):
            raise ConfigError("report.title must be a string")


SECTIONS = {
    'data': DataConfig,
    'covariance': CovarianceConfig,
    'forward': ForwardConfig,
    'model': ModelConfig,
    'train': TrainSection,
    'sampler': SamplerConfig,
    'conditioning': ConditioningConfig,
    'metrics': MetricsConfig,
    'sweep': SweepConfig,
    'report': ReportConfig,
}
RUN_KEYS = {'seed': 0, 'out': 'out', 'threads': 0, 'plot': False}
# run-wide keys that leave computed values unchanged
UNHASHED_KEYS = ('out', 'threads', 'plot')


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    covariance: CovarianceConfig = field(default_factory=CovarianceConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 0
    out: str = 'out'
    threads: int = 0
    plot: bool = False


def _build_section(name, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    coerced = {}
    for key, value in values.items():
        default = known[key].default
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be true or false")
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        coerced[key] = value
    try:
        section = cls(**coerced)
        section.validate()
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid value in [{name}]: {err}") from err
    return section


def config_from_dict(raw):
    """
    Build an ExperimentConfig from a parsed TOML document.

    Args:
        :raw (dict): Mapping of section name to table, plus run-wide keys

    Returns:
        :cfg (ExperimentConfig): The validated configuration
    """
    sections = {}
    run = {}
    for key, value in raw.items():
        if key in SECTIONS:
            sections[key] = _build_section(key, SECTIONS[key], value)
        elif key in RUN_KEYS:
            run[key] = value
        else:
            raise ConfigError(f"unknown section or key '{key}'")
    return ExperimentConfig(**sections, **run)


def load_config(path=None):
    """Read a TOML config file; None gives all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, 'rb') as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return config_from_dict(raw)


def with_overrides(cfg, seed=None, out=None, threads=None):
    """Apply command-line overrides of the run-wide keys."""
    changes = {k: v for k, v in (('seed', seed), ('out', out), ('threads', threads))
               if v is not None}
    return replace(cfg, **changes)


def config_hash(cfg):
    """SHA-256 of the canonical JSON of the resolved configuration, without UNHASHED_KEYS."""
    resolved = {k: v for k, v in asdict(cfg).items() if k not in UNHASHED_KEYS}
    text = json.dumps(resolved, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode()).hexdigest()
