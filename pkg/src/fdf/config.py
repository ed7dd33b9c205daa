"""Pipeline configuration: one versioned JSON document.

Relative paths are resolved against the directory holding the config file.
Unknown keys are rejected so typos surface as input errors.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import Metric
from .flow_data import Period
from .models.benchmarks import BENCHMARK_KINDS
from .models.zoo import FEATURE_FAMILIES, ModelSpec
from .panel import TARGET_KINDS, TRANSFORM_KINDS, ForecastTask, TargetTransform

CONFIG_SCHEMA_VERSION = 1
DEFAULT_SEED = 42


@dataclass
class PathsConfig:
    flows: str
    regions: str
    adjacency: str | None = None
    distances: str | None = None
    events: str | None = None
    features: list = field(default_factory=list)


@dataclass
class TaskConfig:
    target: str = "arrivals"
    horizons: list = field(default_factory=lambda: [1, 3])
    transform: str = "identity"
    alert_threshold: float = 0.30
    partner: str | None = None


@dataclass
class PanelConfig:
    zero_as_missing: bool = True
    target_lags: list = field(default_factory=lambda: [1, 2, 3, 6, 12])
    feature_lags: list = field(default_factory=lambda: [1])
    lag_columns: list | None = None
    neighbor_mode: str | None = None
    neighbor_columns: list = field(default_factory=list)
    missing_flags: bool = True
    impute: bool = True
    epoch: str = "2010-01"
    start: str | None = None
    end: str | None = None


@dataclass
class ModelsConfig:
    seed: int = DEFAULT_SEED
    benchmarks: list = field(default_factory=lambda: [{"kind": "lag", "n": 1}, {"kind": "expanding_mean"}])
    grid: dict = field(default_factory=dict)


@dataclass
class EvaluationConfig:
    train_end: str
    cv: str = "expanding"
    k: int = 5
    min_train: int = 24
    train_len: int = 24
    metric: str = "rmse"
    lambda_over: float = 1.0


@dataclass
class PipelineConfig:
    paths: PathsConfig
    task: TaskConfig
    panel: PanelConfig
    models: ModelsConfig
    evaluation: EvaluationConfig
    base_dir: Path = Path(".")

    # -- derived views

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        return None if value is None else (self.base_dir / value)

    def feature_paths(self) -> list[Path]:
        return [self.base_dir / p for p in self.paths.features]

    def input_paths(self) -> dict[str, Path]:
        out = {k: self.path(k) for k in ("flows", "regions", "adjacency", "distances", "events")}
        out = {k: v for k, v in out.items() if v is not None}
        for p in self.feature_paths():
            out[f"feature:{p.name}"] = p
        return out

    def forecast_task(self, horizon: int) -> ForecastTask:
        t = self.task
        return ForecastTask(horizon, t.target, TargetTransform(t.transform, t.alert_threshold), t.partner)

    def benchmark_specs(self) -> list[ModelSpec]:
        return [ModelSpec.make(b["kind"], **{k: v for k, v in b.items() if k != "kind"})
                for b in self.models.benchmarks]

    def grids(self) -> dict[str, list[ModelSpec]]:
        return {fam: [ModelSpec.make(fam, **params) for params in specs]
                for fam, specs in self.models.grid.items()}

    @property
    def train_end(self) -> Period:
        return Period.parse(self.evaluation.train_end)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "paths": asdict(self.paths),
            "task": asdict(self.task),
            "panel": asdict(self.panel),
            "models": asdict(self.models),
            "evaluation": asdict(self.evaluation),
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON form (independent of key order and whitespace)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _section(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = set(cls.__dataclass_fields__)
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(extra)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def _positive_ints(values, what):
    if not isinstance(values, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1
                                               for v in values):
        raise ConfigError(f"{what} must be a list of integers >= 1")


def _validate(cfg: PipelineConfig) -> None:
    t, p, m, e = cfg.task, cfg.panel, cfg.models, cfg.evaluation
    _positive_ints(t.horizons, "task.horizons")
    if not t.horizons:
        raise ConfigError("task.horizons is empty")
    if t.target not in TARGET_KINDS:
        raise ConfigError(f"task.target must be one of {', '.join(TARGET_KINDS)}")
    if t.transform not in TRANSFORM_KINDS:
        raise ConfigError(f"task.transform must be one of {', '.join(TRANSFORM_KINDS)}")
    _positive_ints(p.target_lags, "panel.target_lags")
    _positive_ints(p.feature_lags, "panel.feature_lags")
    if p.neighbor_mode not in (None, "adjacent", "all"):
        raise ConfigError("panel.neighbor_mode must be null, 'adjacent' or 'all'")
    if p.neighbor_mode == "adjacent" and cfg.paths.adjacency is None:
        raise ConfigError("panel.neighbor_mode 'adjacent' needs paths.adjacency")
    if not isinstance(m.seed, int) or isinstance(m.seed, bool) or not 0 <= m.seed < 2 ** 64:
        raise ConfigError("models.seed must be an unsigned 64-bit integer")
    for b in m.benchmarks:
        if not isinstance(b, dict) or b.get("kind") not in BENCHMARK_KINDS:
            raise ConfigError(f"bad benchmark entry {b!r}")
    unknown = sorted(set(m.grid) - set(FEATURE_FAMILIES))
    if unknown:
        raise ConfigError(f"unknown model family in models.grid: {', '.join(unknown)}")
    for fam, specs in m.grid.items():
        if not isinstance(specs, list) or not specs or not all(isinstance(s, dict) for s in specs):
            raise ConfigError(f"models.grid.{fam} must be a non-empty list of objects")
    try:
        cfg.benchmark_specs()
        cfg.grids()
        Period.parse(p.epoch)
        for v in (p.start, p.end):
            if v is not None:
                Period.parse(v)
        Period.parse(e.train_end)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if e.cv not in ("expanding", "sliding"):
        raise ConfigError("evaluation.cv must be 'expanding' or 'sliding'")
    for name in ("k", "min_train", "train_len"):
        v = getattr(e, name)
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"evaluation.{name} must be an integer >= 1")
    try:
        Metric(e.metric, float(e.lambda_over))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict, base_dir=".") -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    sections = {"paths", "task", "panel", "models", "evaluation"}
    extra = sorted(set(data) - sections - {"schema_version"})
    if extra:
        raise ConfigError(f"unknown top-level key(s): {', '.join(extra)}")
    for required in ("paths", "evaluation"):
        if required not in data:
            raise ConfigError(f"config is missing the {required!r} section")
    cfg = PipelineConfig(
        _section(PathsConfig, data["paths"], "paths"),
        _section(TaskConfig, data.get("task"), "task"),
        _section(PanelConfig, data.get("panel"), "panel"),
        _section(ModelsConfig, data.get("models"), "models"),
        _section(EvaluationConfig, data["evaluation"], "evaluation"),
        Path(base_dir),
    )
    _validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(data, path.parent)


def check_paths(cfg: PipelineConfig) -> None:
    for name, p in cfg.input_paths().items():
        if not p.is_file():
            raise ConfigError(f"input {name} not found: {p}")
