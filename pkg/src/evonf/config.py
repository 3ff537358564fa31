"""Run configuration, layered from built-in defaults, a YAML file, the environment and flags.

Later layers win: defaults < config file < environment (``EVONF_OUTPUT_DIR``,
``EVONF_WORKERS``) < command-line flags. Every layer is a nested dict with the keys of
``src/vars/evonf.yaml``; unknown keys are rejected.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from evonf.common import OUTPUT_DIR, env
from evonf.common.exceptions import ConfigError, EvoNFException
from evonf.evolution import EvolutionConfig
from evonf.local_search import LocalSearchConfig
from evonf.mlp import MLPConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    n: int = 69
    seed: int = 7
    noise_sd: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    """Everything a training command needs; exactly one data source is used.

    A data file takes precedence over the synthetic generator.
    """

    data: Optional[Path] = None
    synth: Optional[SynthSpec] = field(default_factory=SynthSpec)
    seeds: Tuple[int, ...] = (1, 2, 3)
    output_dir: Path = OUTPUT_DIR
    train_fraction: float = 0.9
    split_seed: int = 0
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    local_search: LocalSearchConfig = field(default_factory=LocalSearchConfig)
    mlp: MLPConfig = field(default_factory=MLPConfig)

    def __post_init__(self) -> None:
        if self.data is None and self.synth is None:
            raise ConfigError("Either a data file or synthetic data settings are required.")
        if not self.seeds:
            raise ConfigError("At least one seed is required.")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")

    def to_dict(self) -> Dict[str, Any]:
        """JSON friendly echo of the configuration."""
        echo = asdict(self)
        echo["data"] = str(self.data) if self.data is not None else None
        echo["output_dir"] = str(self.output_dir)
        echo["seeds"] = list(self.seeds)
        return echo


_SECTIONS = {
    "synth": SynthSpec,
    "evolution": EvolutionConfig,
    "local_search": LocalSearchConfig,
    "mlp": MLPConfig,
}
_TOP_LEVEL = {f.name for f in fields(RunConfig)}


def _check_keys(layer: Mapping[str, Any], source: str) -> None:
    for key, value in layer.items():
        if key not in _TOP_LEVEL:
            raise ConfigError(f"Unknown configuration key {key!r} in {source}")
        if key in _SECTIONS and value is not None:
            if not isinstance(value, Mapping):
                raise ConfigError(f"Configuration key {key!r} in {source} must be a mapping")
            known = {f.name for f in fields(_SECTIONS[key])}
            for sub in value:
                if sub not in known:
                    raise ConfigError(f"Unknown configuration key '{key}.{sub}' in {source}")


def merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Deep merge of two configuration layers; ``override`` wins."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read one YAML configuration layer."""
    try:
        with open(path, encoding="utf-8") as f:
            layer = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read configuration file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Configuration file {path} is not valid YAML: {e}") from e
    if layer is None:
        return {}
    if not isinstance(layer, Mapping):
        raise ConfigError(f"Configuration file {path} must hold a mapping")
    _check_keys(layer, str(path))
    return dict(layer)


def environment_layer() -> Dict[str, Any]:
    """Settings taken from the environment, only for variables that are set."""
    layer: Dict[str, Any] = {}
    output_dir = env.path("EVONF_OUTPUT_DIR", None)
    if output_dir is not None:
        layer["output_dir"] = output_dir
    workers = env.int("EVONF_WORKERS", None)
    if workers is not None:
        layer["evolution"] = {"workers": workers}
    return layer


def from_layers(layer: Mapping[str, Any]) -> RunConfig:
    """Build a RunConfig from a merged configuration layer."""
    _check_keys(layer, "configuration")
    values = dict(layer)
    try:
        for key, cls in _SECTIONS.items():
            if key in values and values[key] is not None:
                values[key] = cls(**values[key])
        if values.get("data") is not None:
            values["data"] = Path(values["data"])
            values["synth"] = None
        if "output_dir" in values:
            values["output_dir"] = Path(values["output_dir"])
        if "seeds" in values:
            values["seeds"] = tuple(int(s) for s in values["seeds"])
        return RunConfig(**values)
    except ConfigError:
        raise
    except (EvoNFException, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def build_config(
    config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """Resolve the layered configuration of one command."""
    layer: Dict[str, Any] = {}
    if config_file is not None:
        logger.info("Reading configuration from %s", config_file)
        layer = merge(layer, load_config_file(config_file))
    layer = merge(layer, environment_layer())
    if overrides:
        _check_keys(overrides, "command line")
        layer = merge(layer, overrides)
    config = from_layers(layer)
    logger.debug("Resolved configuration: %s", config)
    return config
