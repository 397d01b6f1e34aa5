from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from xmoco.constants import GainKind, MetricConfig, PathConfig
from xmoco.data.synthetic import SynthSpec
from xmoco.errors import ConfigError
from xmoco.model.encoders import EncoderConfig, TowerPair, default_encoder_configs
from xmoco.training.config import TrainConfig

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalOptions:
    """
    Evaluation settings.

    Attributes:
        recall_ks (tuple[int, ...]): Recall cut-offs.
        ndcg_ks (tuple[int, ...]): NDCG cut-offs.
        gain (GainKind): NDCG gain.
        map_threshold (int): Grades above this are relevant for MAP.

    """

    recall_ks: tuple[int, ...] = MetricConfig.RECALL_KS
    ndcg_ks: tuple[int, ...] = MetricConfig.NDCG_KS
    gain: GainKind = GainKind.LINEAR
    map_threshold: int = MetricConfig.MAP_THRESHOLD

    def __post_init__(self) -> None:
        object.__setattr__(self, "recall_ks", tuple(int(k) for k in self.recall_ks))
        object.__setattr__(self, "ndcg_ks", tuple(int(k) for k in self.ndcg_ks))
        try:
            object.__setattr__(self, "gain", GainKind(self.gain))
        except ValueError as e:
            raise ConfigError(f"eval.gain must be one of {[g.value for g in GainKind]}, got {self.gain!r}") from e

    def validate(self) -> None:
        """
        Check the cut-offs.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        for key in ("recall_ks", "ndcg_ks"):
            values = getattr(self, key)
            if not values or any(k < 1 for k in values):
                raise ConfigError(f"eval.{key} must be a non-empty list of values >= 1, got {list(values)}")

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain JSON types."""
        return {
            "recall_ks": list(self.recall_ks),
            "ndcg_ks": list(self.ndcg_ks),
            "gain": self.gain.value,
            "map_threshold": self.map_threshold,
        }


@dataclass(frozen=True)
class ServiceOptions:
    """
    Embedding service settings.

    Attributes:
        host (str): Interface to bind.
        port (int): TCP port (0 picks a free one).
        corpus_path (str): Pair file indexed for the retrieve endpoint ("" disables it).

    """

    host: str = "127.0.0.1"
    port: int = 8080
    corpus_path: str = ""

    def validate(self) -> None:
        """
        Check the port.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"service.port must lie in [0, 65535], got {self.port}")


def _default_tower(index: int) -> EncoderConfig:
    return default_encoder_configs()[index]


@dataclass(frozen=True)
class RunConfig:
    """Every section a command may need, validated together before any work starts."""

    train: TrainConfig = field(default_factory=TrainConfig)
    encoder_a: EncoderConfig = field(default_factory=lambda: _default_tower(0))
    encoder_b: EncoderConfig = field(default_factory=lambda: _default_tower(1))
    synth: SynthSpec = field(default_factory=SynthSpec)
    eval: EvalOptions = field(default_factory=EvalOptions)
    service: ServiceOptions = field(default_factory=ServiceOptions)

    @property
    def towers(self) -> TowerPair:
        """Get both tower configs as a pair."""
        return TowerPair(self.encoder_a, self.encoder_b)

    def validate(self) -> None:
        """
        Validate every section.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        self.train.validate()
        self.towers.validate()
        self.synth.validate()
        self.eval.validate()
        self.service.validate()

    def to_dict(self) -> dict[str, Any]:
        """Serialize every section to plain JSON types."""
        return {
            "train": self.train.to_dict(),
            "encoder_a": self.encoder_a.to_dict(),
            "encoder_b": self.encoder_b.to_dict(),
            "synth": self.synth.to_dict(),
            "eval": self.eval.to_dict(),
            "service": {f.name: getattr(self.service, f.name) for f in fields(ServiceOptions)},
        }


SECTIONS: dict[str, type[Any]] = {
    "train": TrainConfig,
    "encoder_a": EncoderConfig,
    "encoder_b": EncoderConfig,
    "synth": SynthSpec,
    "eval": EvalOptions,
    "service": ServiceOptions,
}

TUPLE_KEYS = {"betas", "split", "hidden_dims", "recall_ks", "ndcg_ks"}


def _check_type(where: str, old: Any, new: Any) -> None:  # noqa: ANN401
    """Reject a value whose JSON type does not fit the field (ints are accepted for floats)."""
    if isinstance(old, bool):
        ok = isinstance(new, bool)
    elif isinstance(old, int):
        ok = isinstance(new, int) and not isinstance(new, bool)
    elif isinstance(old, float):
        ok = isinstance(new, (int, float)) and not isinstance(new, bool)
    elif isinstance(old, tuple):
        ok = isinstance(new, list) and all(isinstance(item, (int, float)) and not isinstance(item, bool) for item in new)
    else:
        ok = isinstance(new, str)
    if not ok:
        raise ConfigError(f"{where} has the wrong type: got {new!r}")


def _build_section(name: str, current: Any, values: dict[str, Any]) -> Any:  # noqa: ANN401
    """Apply a section's values on top of its current dataclass, rejecting unknown keys."""
    if not isinstance(values, dict):
        raise ConfigError(f"Section {name!r} must be a JSON object")
    known = {f.name for f in fields(SECTIONS[name])}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in section {name!r}: {unknown}")
    converted = {}
    for key, value in values.items():
        _check_type(f"{name}.{key}", getattr(current, key), value)
        converted[key] = tuple(value) if key in TUPLE_KEYS else value
    try:
        return replace(current, **converted)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value in section {name!r}: {e}") from e


def apply_sections(config: RunConfig, data: dict[str, Any]) -> RunConfig:
    """
    Overlay a (possibly partial) JSON object of sections onto a config.

    Raises:
        ConfigError: On an unknown section or key.

    """
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config sections: {unknown}")
    updates = {name: _build_section(name, getattr(config, name), values) for name, values in data.items()}
    return replace(config, **updates)


def load_config(path: Path | None = None) -> RunConfig:
    """
    Load a JSON run configuration on top of the defaults.

    Args:
        path (Path | None): The config file; the bundled default is used when omitted.

    Returns:
        RunConfig: The merged (not yet validated) configuration.

    Raises:
        ConfigError: If the file is not a JSON object or has unknown sections or keys.
        OSError: If the file cannot be read.

    """
    path = path or PathConfig.DEFAULT_CONFIG
    try:
        with path.open(encoding="utf-8") as file:
            data = json.load(file)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object of sections")
    LOGGER.debug(f"Loaded config {path}")
    return apply_sections(RunConfig(), data)


def parse_override(text: str) -> tuple[str, str, Any]:
    """
    Parse ``section.key=value``; the value is read as JSON, falling back to a plain string.

    Raises:
        ConfigError: If the override is not of that form.

    """
    target, sep, raw = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"Overrides must look like section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``--set`` overrides in order."""
    for text in overrides:
        section, key, value = parse_override(text)
        config = apply_sections(config, {section: {key: value}})
    return config
