"""
Experiment configuration: a TOML file bound to frozen dataclasses.

    schema_version = 1
    name = "default"
    seeds = [0, 1, 2, 3, 4]

    [world]      -> WorldConfig
    [model]      -> ModelConfig
    [run]        -> RunConfig scalars (``K`` is accepted for ``max_paste``)
    [estimator]  -> EstimatorConfig
    [gate]       -> GateConfig
    [offline]    -> OfflineConfig
    [distribution] -> DistributionConfig

Unknown keys, wrong types and out-of-range values all raise ConfigError.
"""
import copy
import dataclasses
import enum
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from bsgal.errors import BsgalError, ConfigError
from bsgal.ingest.world import WorldConfig
from bsgal.model import ModelConfig
from bsgal.transform.estimator import EstimatorConfig
from bsgal.transform.gate import GateConfig
from bsgal.transform.trainer import RunConfig
from bsgal.utils import canonical_hash, logger

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
RUN_ALIASES = {"K": "max_paste"}


@dataclass(frozen=True)
class OfflineConfig:
    keep_fraction: float = 0.5
    pool_size: int = 2000

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError(f"offline.keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.pool_size < 1:
            raise ConfigError(f"offline.pool_size must be >= 1, got {self.pool_size}")


@dataclass(frozen=True)
class DistributionConfig:
    samples_per_tier: int = 1000
    bins: int = 30

    def __post_init__(self):
        if self.samples_per_tier < 1:
            raise ConfigError(f"distribution.samples_per_tier must be >= 1, got {self.samples_per_tier}")
        if self.bins < 1:
            raise ConfigError(f"distribution.bins must be >= 1, got {self.bins}")


@dataclass(frozen=True)
class RunSettings:
    """The [run] table: RunConfig minus the parts owned by other tables."""
    iterations: int = 10000
    batch_accept: int = 16
    batch_test: int = 32
    batch_train: int | None = None
    num_workers: int = 4
    lr: float = 0.05
    lr_min: float = 0.005
    max_paste: int = 8
    sampling: str = "pasted_classes"
    train_components: tuple[str, ...] = ("cls", "aux")
    eval_every: int | None = None
    worker_seeds: tuple[int, ...] = ()
    parallel: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    output_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    # parameter file of a real-only run, needed by `distribution` and `train offline`
    pretrained: str | None = None
    schema_version: int = SCHEMA_VERSION
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    run: RunSettings = field(default_factory=RunSettings)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    distribution: DistributionConfig = field(default_factory=DistributionConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")

    def run_config(self, seed: int | None = None) -> RunConfig:
        """The RunConfig for one seed; the seed drives sampling and initialization, the world stays fixed."""
        seed = self.seeds[0] if seed is None else seed
        try:
            return RunConfig(
                **dataclasses.asdict(self.run),
                seed=seed,
                offline_pool_size=self.offline.pool_size,
                world=self.world,
                model=dataclasses.replace(self.model, seed=seed),
                estimator=self.estimator,
                gate=self.gate,
            )
        except (BsgalError, ValueError, TypeError) as e:
            raise ConfigError(f"invalid run configuration: {e}") from e

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=(seed,))

    def with_output_dir(self, output_dir: str | Path) -> "ExperimentConfig":
        return dataclasses.replace(self, output_dir=str(output_dir))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        """SHA-256 of the resolved config; the output directory is not part of it."""
        payload = self.to_dict()
        payload.pop("output_dir")
        return canonical_hash(payload)


def _plain(value: Any) -> Any:
    """JSON-friendly copy: enums to values, tuples to lists, non-finite floats to strings."""
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _check_type(table: str, f: dataclasses.Field, value: Any) -> Any:
    """Light type check against the field's default; lists become tuples."""
    default = f.default if f.default is not dataclasses.MISSING else None
    where = f"{table}.{f.name}" if table else f.name
    if isinstance(value, list):
        if default is not None and not isinstance(default, tuple):
            raise ConfigError(f"{where} does not take a list")
        return tuple(value)
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
    elif isinstance(default, enum.Enum) or isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    elif isinstance(default, tuple):
        if isinstance(value, str):
            # "cls+aux" style shorthand for component lists
            return tuple(value.split("+"))
        raise ConfigError(f"{where} must be a list, got {value!r}")
    return value


def _bind(cls, table: str, values: dict, aliases: dict[str, str] | None = None):
    if not isinstance(values, dict):
        raise ConfigError(f"[{table}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        key = (aliases or {}).get(key, key)
        if key not in known:
            raise ConfigError(f"unknown key {table + '.' if table else ''}{key}")
        kwargs[key] = _check_type(table, known[key], value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (BsgalError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid [{table}]: {e}") from e


@dataclass(frozen=True)
class _TopLevel:
    name: str = "default"
    output_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    pretrained: str | None = None


TABLES = {
    "world": WorldConfig,
    "model": ModelConfig,
    "run": RunSettings,
    "estimator": EstimatorConfig,
    "gate": GateConfig,
    "offline": OfflineConfig,
    "distribution": DistributionConfig,
}


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    tables = {
        name: _bind(cls, name, raw.pop(name, {}), RUN_ALIASES if name == "run" else None)
        for name, cls in TABLES.items()
    }
    top = _bind(_TopLevel, "", raw)
    try:
        config = ExperimentConfig(**dataclasses.asdict(top), **tables)
    except (BsgalError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    # cross-table checks (train batch size, sampling names, seeds) live in RunConfig
    config.run_config()
    return config


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``dotted.key=value``; the value is read as a TOML literal, else kept as a bare string."""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like dotted.key=value, got {text!r}")
    try:
        parsed = tomllib.loads(f"value = {value.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key.split("."), parsed


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    raw = copy.deepcopy(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {text!r}: {part} is not a table")
        node[path[-1]] = value
        logger.debug(f"Config override {'.'.join(path)} = {value!r}")
    return raw


def default_raw() -> dict:
    return {"schema_version": SCHEMA_VERSION}


def load_config(path: Path | str | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a TOML config (or the built-in defaults when ``path`` is None) and apply overrides."""
    if path is None:
        raw = default_raw()
    else:
        path = Path(path)
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path} is not valid TOML: {e}") from e
    config = from_dict(apply_overrides(raw, overrides))
    logger.info(f"Loaded config {config.name!r} ({config.config_hash()[:12]})")
    return config
