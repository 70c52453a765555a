"""Pipeline configuration: JSON file, environment overrides, validation."""
import copy
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .aggregate import STRATEGIES, VOTE_MODES
from .exceptions import ConfigError
from .model import MODEL_KEYS, TRAIN_KEYS, TrainConfig
from .pcmci import DiscoveryConfig

ENV_OUTPUT_DIR = "CTGCN_OUTPUT_DIR"
ENV_WORKERS = "CTGCN_WORKERS"

STAGES = ("simulate", "cluster", "discover", "aggregate", "train", "forecast", "evaluate", "benchmark")
SIM_KINDS = ("diffusion", "scm", "block")
ADJACENCY_SOURCES = ("discovered", "discovered-undirected", "truth", "none", "distance")
_ELBOW = re.compile(r"^elbow:(\d+)\.\.(\d+)$")


@dataclass
class DataSection:
    path: str = None
    delimiter: str = ","
    timestamp_column: bool = True
    downsample: int = 1

    def validate(self):
        if self.downsample < 1:
            raise ConfigError("must be >= 1", "data.downsample")


@dataclass
class SimulateSection:
    kind: str = "diffusion"
    n_steps: int = 3000
    # diffusion
    n_nodes: int = 20
    neighbours: int = 3
    rho: float = 0.3
    decay: float = 0.98
    extent: float = 10.0
    layout: str = "carriageway"  # or "independent"
    jitter: float = 0.1
    # random / block SCM
    n_vars: int = 8
    n_edges: int = 5
    max_lag: int = 3
    coef_range: list = field(default_factory=lambda: [0.4, 0.8])
    n_blocks: int = 4
    block_size: int = 8
    noise: float = 1.0

    def validate(self):
        if self.kind not in SIM_KINDS:
            raise ConfigError(f"must be one of {SIM_KINDS}, got {self.kind!r}", "simulate.kind")
        if self.layout not in ("carriageway", "independent"):
            raise ConfigError(f"must be 'carriageway' or 'independent', got {self.layout!r}", "simulate.layout")
        if self.kind == "diffusion" and self.layout == "carriageway" and self.n_nodes % 2:
            raise ConfigError("a carriageway layout needs an even node count", "simulate.n_nodes")
        if self.n_steps < 10:
            raise ConfigError("must be >= 10", "simulate.n_steps")
        if not 0 < self.rho < 1:
            raise ConfigError(f"must lie in (0, 1), got {self.rho}", "simulate.rho")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"must lie in (0, 1], got {self.decay}", "simulate.decay")
        if len(self.coef_range) != 2 or not 0 < self.coef_range[0] <= self.coef_range[1]:
            raise ConfigError("must be [low, high] with 0 < low <= high", "simulate.coef_range")


@dataclass
class DiscoverySection:
    tau_max: int = 1
    alpha: float = 0.01
    pc_alpha: float = None
    max_condition_size: int = 3
    period_len: int = None       # None: one period spanning the series
    clusters: object = 1         # int or "elbow:kmin..kmax"
    dtw_band: int = None
    dtw_downsample: int = 1
    vote_mode: str = "any"
    strategy: str = "MT;W"
    directed: bool = True

    def discovery_config(self):
        try:
            return DiscoveryConfig(self.tau_max, self.alpha, self.pc_alpha, self.max_condition_size)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"discovery.{exc.field}") from None

    def elbow_range(self):
        if isinstance(self.clusters, str):
            m = _ELBOW.match(self.clusters)
            return int(m.group(1)), int(m.group(2))
        return None

    def validate(self):
        self.discovery_config()
        if isinstance(self.clusters, bool) or not isinstance(self.clusters, (int, str)):
            raise ConfigError("must be an integer or 'elbow:kmin..kmax'", "discovery.clusters")
        if isinstance(self.clusters, str):
            m = _ELBOW.match(self.clusters)
            if not m or not 1 <= int(m.group(1)) <= int(m.group(2)):
                raise ConfigError(f"expected 'elbow:kmin..kmax', got {self.clusters!r}", "discovery.clusters")
        elif self.clusters < 1:
            raise ConfigError("must be >= 1", "discovery.clusters")
        if self.period_len is not None and self.period_len < self.tau_max + 10:
            raise ConfigError(f"must be >= tau_max + 10 = {self.tau_max + 10}", "discovery.period_len")
        if self.vote_mode not in VOTE_MODES:
            raise ConfigError(f"must be one of {VOTE_MODES}", "discovery.vote_mode")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"must be one of {STRATEGIES}", "discovery.strategy")
        if self.dtw_band is not None and self.dtw_band < 0:
            raise ConfigError("must be >= 0", "discovery.dtw_band")
        if self.dtw_downsample < 1:
            raise ConfigError("must be >= 1", "discovery.dtw_downsample")


@dataclass
class ForecastSection:
    history_len: int = 12
    horizon: int = 6
    kernel_width: int = 3
    channels: int = 16
    hidden: int = 16
    hidden_out: int = 16
    output_activation: str = "identity"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    adjacency: str = "discovered"
    sigma2: float = 10.0
    epsilon: float = 0.5
    tune: dict = None

    def train_config(self, seed):
        try:
            return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum, seed,
                               self.train_fraction, self.val_fraction, self.test_fraction)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"forecast.{exc.field}") from None

    def model_kwargs(self):
        return {k: getattr(self, k) for k in MODEL_KEYS} | {"output_activation": self.output_activation}

    def validate(self):
        self.train_config(0)
        for key in ("history_len", "horizon", "channels", "hidden", "hidden_out"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", f"forecast.{key}")
        if not 1 <= self.kernel_width <= self.history_len:
            raise ConfigError(f"must lie in [1, history_len={self.history_len}]", "forecast.kernel_width")
        if self.output_activation not in ("identity", "sigmoid"):
            raise ConfigError("must be 'identity' or 'sigmoid'", "forecast.output_activation")
        if self.adjacency not in ADJACENCY_SOURCES and not self.adjacency.endswith(".json"):
            raise ConfigError(f"must be one of {ADJACENCY_SOURCES} or a .json path", "forecast.adjacency")
        if self.tune is not None:
            if not isinstance(self.tune, dict) or not self.tune:
                raise ConfigError("must be a non-empty mapping of lists", "forecast.tune")
            for k, v in self.tune.items():
                if k not in MODEL_KEYS + TRAIN_KEYS:
                    raise ConfigError(f"unknown hyperparameter {k!r}", "forecast.tune")
                if not isinstance(v, list) or not v:
                    raise ConfigError(f"{k} needs a non-empty list", "forecast.tune")


@dataclass
class BenchmarkSection:
    repetitions: int = 3
    enabled: bool = True

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError("must be >= 1", "benchmark.repetitions")


SECTIONS = {
    "data": DataSection,
    "simulate": SimulateSection,
    "discovery": DiscoverySection,
    "forecast": ForecastSection,
    "benchmark": BenchmarkSection,
}


def _check_type(value, default, name):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", name)
    elif isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, str) and name.endswith("clusters"))):
            raise ConfigError(f"expected an integer, got {value!r}", name)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", name)
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", name)
    return value


def _build_section(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", prefix)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", prefix)
    defaults = cls()
    kwargs = {k: _check_type(v, getattr(defaults, k), f"{prefix}.{k}") for k, v in raw.items()}
    section = cls(**kwargs)
    section.validate()
    return section


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = None          # None: available cores
    output_dir: str = "ctgcn-out"
    data: DataSection = field(default_factory=DataSection)
    simulate: SimulateSection = None
    discovery: DiscoverySection = field(default_factory=DiscoverySection)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        top = {"seed", "workers", "output_dir"} | set(SECTIONS)
        unknown = sorted(set(raw) - top)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", "config")
        cfg = cls()
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"expected a non-negative integer, got {seed!r}", "seed")
        cfg.seed = seed
        cfg.workers = raw.get("workers")
        cfg.output_dir = raw.get("output_dir", cfg.output_dir)
        for name, section_cls in SECTIONS.items():
            if name in raw and raw[name] is not None:
                setattr(cfg, name, _build_section(section_cls, raw[name], name))
        if cfg.data.path is not None and not os.path.isabs(cfg.data.path):
            cfg.data.path = os.path.normpath(os.path.join(base_dir, cfg.data.path))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}", "config") from None
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    def validate(self):
        if self.workers is not None and (isinstance(self.workers, bool) or not isinstance(self.workers, int)
                                         or self.workers < 1):
            raise ConfigError(f"expected a positive integer, got {self.workers!r}", "workers")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("expected a non-empty path", "output_dir")
        if self.data.path is not None and not os.path.isfile(self.data.path):
            raise ConfigError(f"file {self.data.path} does not exist", "data.path")

    def apply_overrides(self, overrides):
        """Apply ``{"section.key": value}`` (or top-level ``key``) overrides and re-validate."""
        raw = self.to_dict()
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            node = raw
            for p in parts[:-1]:
                if node.get(p) is None:
                    node[p] = {}
                node = node[p]
            node[parts[-1]] = value
        return PipelineConfig.from_dict(raw)

    def apply_environment(self, environ=None):
        environ = os.environ if environ is None else environ
        overrides = {}
        if environ.get(ENV_OUTPUT_DIR):
            overrides["output_dir"] = environ[ENV_OUTPUT_DIR]
        if environ.get(ENV_WORKERS):
            try:
                overrides["workers"] = int(environ[ENV_WORKERS])
            except ValueError:
                raise ConfigError(f"{ENV_WORKERS} must be an integer", "workers") from None
        return self.apply_overrides(overrides) if overrides else self

    def to_dict(self):
        d = asdict(self)
        return copy.deepcopy(d)

    def resolved_workers(self):
        return self.workers or os.cpu_count() or 1

    def config_hash(self):
        """SHA-256 of everything that can change results (not paths or worker count)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def stage_seed(self, stage):
        """Per-stage seed fanned out deterministically from the root seed."""
        ss = np.random.SeedSequence([self.seed, STAGES.index(stage)])
        return int(ss.generate_state(1)[0])
