from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any

from xmoco.constants import PathConfig, TemperatureConfig
from xmoco.errors import ConfigError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Every knob of the optimization loop.

    Attributes:
        batch_size (int): Pairs per step (bs).
        epochs (int): Passes over the training split.
        base_lr (float): Learning rate at the first step; cosine-decayed to 0 at the last.
        weight_decay (float): Decoupled decay for weight matrices.
        betas (tuple[float, float]): Moment decay rates.
        adam_eps (float): Optimizer denominator floor.
        momentum (float): Momentum-encoder coefficient m.
        queue_capacity (int): Negative queue size K.
        tau_init (float): Initial temperature.
        seed (int): Seeds shuffling and splitting.
        split (tuple[float, float, float]): Train/val/test fractions of the pair file.
        eval_every (int): Steps between held-out evaluations (0 disables periodic evaluation).
        log_every (int): Steps between progress log lines.
        stop_at_step (int): Stop and checkpoint after this global step (0 runs to the end).
        data_path (str): Pair file to train on.
        checkpoint_path (str): Where the final checkpoint is written.
        history_path (str): Where the JSONL training history is written.

    """

    batch_size: int = 64
    epochs: int = 15
    base_lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    momentum: float = 0.99
    queue_capacity: int = 512
    tau_init: float = TemperatureConfig.INIT
    seed: int = 0
    split: tuple[float, float, float] = (2 / 3, 0.0, 1 / 3)
    eval_every: int = 500
    log_every: int = 50
    stop_at_step: int = 0
    data_path: str = str(PathConfig.RUNS / "pairs.jsonl")
    checkpoint_path: str = str(PathConfig.RUNS / "xmoco.xmco")
    history_path: str = str(PathConfig.RUNS / "history.jsonl")

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))

    def validate(self) -> None:
        """
        Check every value; warn when the queue is smaller than a batch.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        for key in ("batch_size", "epochs", "queue_capacity"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"train.{key} must be >= 1, got {getattr(self, key)}")
        for key in ("eval_every", "log_every", "stop_at_step", "seed"):
            if int(getattr(self, key)) < 0:
                raise ConfigError(f"train.{key} must be >= 0, got {getattr(self, key)}")
        for key in ("base_lr", "weight_decay"):
            value = getattr(self, key)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"train.{key} must be a finite value >= 0, got {value}")
        if not (self.adam_eps > 0 and math.isfinite(self.adam_eps)):
            raise ConfigError(f"train.adam_eps must be > 0, got {self.adam_eps}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"train.betas must be two values in [0, 1), got {list(self.betas)}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1], got {self.momentum}")
        if not TemperatureConfig.MIN <= self.tau_init <= TemperatureConfig.MAX:
            raise ConfigError(
                f"train.tau_init must lie in [{TemperatureConfig.MIN}, {TemperatureConfig.MAX}], got {self.tau_init}",
            )
        if len(self.split) != 3 or any(f < 0 for f in self.split) or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigError(f"train.split must be three non-negative fractions summing to 1, got {list(self.split)}")
        if self.queue_capacity < self.batch_size:
            LOGGER.warning(
                f"train.queue_capacity ({self.queue_capacity}) is smaller than train.batch_size ({self.batch_size}); "
                "each push evicts part of the same batch",
            )

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain JSON types."""
        data = asdict(self)
        data["betas"] = list(self.betas)
        data["split"] = list(self.split)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        """
        Build from plain JSON types.

        Raises:
            ConfigError: On an unknown key.

        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown train keys: {unknown}")
        values = dict(data)
        for key in ("betas", "split"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)
