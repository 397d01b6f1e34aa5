from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array, Embedding
from xmoco.errors import ConfigError, DegenerateEmbeddingError, ShapeError
from xmoco.numkit import ParamSet, Tensor, l2_normalize, linear, relu

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    """
    Shape of one tower: MLP backbone over a feature vector, then a two-layer projection head.

    Attributes:
        input_dim (int): Length of this modality's feature vectors.
        hidden_dims (tuple[int, ...]): Widths of the backbone layers (each followed by ReLU).
        proj_hidden (int): Hidden width of the projection head.
        embed_dim (int): Dimension of the joint embedding space.
        seed (int): Initialization seed.

    """

    input_dim: int = 64
    hidden_dims: tuple[int, ...] = (64,)
    proj_hidden: int = 64
    embed_dim: int = 32
    seed: int = 0

    def validate(self, section: str = "encoder") -> None:
        """
        Check every dimension.

        Raises:
            ConfigError: Naming the first invalid key.

        """
        for key in ("input_dim", "proj_hidden", "embed_dim"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{section}.{key} must be >= 1, got {getattr(self, key)}")
        for width in self.hidden_dims:
            if int(width) < 1:
                raise ConfigError(f"{section}.hidden_dims entries must be >= 1, got {list(self.hidden_dims)}")

    def layer_sizes(self) -> list[tuple[str, int, int]]:
        """Get (layer name, fan_in, fan_out) in forward order."""
        sizes: list[tuple[str, int, int]] = []
        fan_in = self.input_dim
        for i, width in enumerate(self.hidden_dims):
            sizes.append((f"backbone.{i:02d}", fan_in, width))
            fan_in = width
        sizes.append(("head.00", fan_in, self.proj_hidden))
        sizes.append(("head.01", self.proj_hidden, self.embed_dim))
        return sizes

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain JSON types."""
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EncoderConfig:
        """Build from plain JSON types."""
        values = dict(data)
        if "hidden_dims" in values:
            values["hidden_dims"] = tuple(int(w) for w in values["hidden_dims"])
        return cls(**values)


class EncoderParams(ParamSet):
    """
    Parameters of one tower, named ``<layer>.weight`` / ``<layer>.bias``.

    Attributes:
        config (EncoderConfig): The architecture the parameters belong to.

    """

    def __init__(self, config: EncoderConfig, tensors: Mapping[str, npt.ArrayLike]) -> None:
        super().__init__(tensors)
        self.config = config
        expected = {}
        for layer, fan_in, fan_out in config.layer_sizes():
            expected[f"{layer}.weight"] = (fan_out, fan_in)
            expected[f"{layer}.bias"] = (fan_out,)
        if self.shapes() != expected:
            raise ShapeError(f"Encoder parameters {self.shapes()} do not match config layout {expected}")

    def with_tensors(self, tensors: Mapping[str, npt.ArrayLike]) -> EncoderParams:
        self.check_same_layout(tensors)
        return EncoderParams(self.config, tensors)


def init_encoder(cfg: EncoderConfig) -> EncoderParams:
    """
    Initialize a tower: weights ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)), biases zero.

    Args:
        cfg (EncoderConfig): The tower layout and seed.

    Returns:
        EncoderParams: Deterministic parameters for the given seed.

    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, Array] = {}
    for layer, fan_in, fan_out in cfg.layer_sizes():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        tensors[f"{layer}.weight"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        tensors[f"{layer}.bias"] = np.zeros(fan_out)
    params = EncoderParams(cfg, tensors)
    LOGGER.debug(f"Initialized encoder with {params.num_values()} values (seed {cfg.seed})")
    return params


def forward(config: EncoderConfig, params: Mapping[str, Tensor], x: Tensor) -> Tensor:
    """
    Differentiable tower: backbone (linear + ReLU per layer), head (linear, ReLU, linear), L2 normalization.

    Args:
        config (EncoderConfig): The tower layout.
        params (Mapping[str, Tensor]): One tensor per parameter name.
        x (Tensor): Features, shape (batch, input_dim).

    Returns:
        Tensor: Unit-norm embeddings, shape (batch, embed_dim).

    """
    h = x
    layers = config.layer_sizes()
    for i, (layer, _fan_in, _fan_out) in enumerate(layers):
        h = linear(h, params[f"{layer}.weight"], params[f"{layer}.bias"])
        if i < len(layers) - 1:
            h = relu(h)
    return l2_normalize(h)


def as_feature_matrix(features: Sequence[npt.ArrayLike] | Array, input_dim: int) -> Array:
    """
    Stack feature vectors into a (rows, input_dim) float64 matrix.

    Raises:
        ShapeError: Naming the index of the first vector with the wrong length.

    """
    if isinstance(features, np.ndarray) and features.ndim == 2:
        if features.shape[1] != input_dim:
            raise ShapeError(f"Expected feature length {input_dim}, got {features.shape[1]}")
        return np.asarray(features, dtype=np.float64)
    rows = [np.asarray(f, dtype=np.float64) for f in features]
    for i, row in enumerate(rows):
        if row.shape != (input_dim,):
            raise ShapeError(f"Item {i}: expected feature length {input_dim}, got shape {row.shape}")
    if not rows:
        return np.zeros((0, input_dim))
    return np.stack(rows)


def encode_batch(params: EncoderParams, features: Sequence[npt.ArrayLike] | Array) -> list[Embedding]:
    """
    Embed a list of feature vectors, preserving order.

    Args:
        params (EncoderParams): The tower.
        features (Sequence[ArrayLike] | Array): Feature vectors of length ``input_dim``.

    Returns:
        list[Embedding]: One unit-norm embedding per input.

    Raises:
        ShapeError: If a vector has the wrong length (with its index).
        DegenerateEmbeddingError: If a vector maps to (near) zero before normalization (with its index).

    """
    matrix = embed_matrix(params, features)
    return list(matrix)


def embed_matrix(params: EncoderParams, features: Sequence[npt.ArrayLike] | Array) -> Array:
    """Embed feature vectors into a (rows, embed_dim) matrix; see :func:`encode_batch`."""
    x = as_feature_matrix(features, params.config.input_dim)
    if x.shape[0] == 0:
        return np.zeros((0, params.config.embed_dim))
    if not np.isfinite(x).all():
        bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise ShapeError(f"Item {bad}: features must be finite")
    constants = {name: Tensor(array) for name, array in params.items()}
    try:
        return forward(params.config, constants, Tensor(x)).data
    except DegenerateEmbeddingError as e:
        raise DegenerateEmbeddingError(f"Item {e.index}: {e}", index=e.index) from e


def encode(params: EncoderParams, x: npt.ArrayLike) -> Embedding:
    """
    Embed one feature vector into the joint space.

    Raises:
        ShapeError: If ``x`` has the wrong length.
        DegenerateEmbeddingError: If the pre-normalization vector is (near) zero.

    """
    return embed_matrix(params, [x])[0]


def default_encoder_configs(embed_dim: int = 32, seed: int = 0) -> tuple[EncoderConfig, EncoderConfig]:
    """Get the desk-default tower pair (64-d features for modality a, 48-d for modality b)."""
    return (
        EncoderConfig(input_dim=64, embed_dim=embed_dim, seed=seed),
        EncoderConfig(input_dim=48, embed_dim=embed_dim, seed=seed + 1),
    )


@dataclass(frozen=True)
class TowerPair:
    """Configs of both towers, checked to share the joint-space dimension."""

    a: EncoderConfig = field(default_factory=lambda: default_encoder_configs()[0])
    b: EncoderConfig = field(default_factory=lambda: default_encoder_configs()[1])

    def validate(self) -> None:
        """
        Validate both towers and their shared embed_dim.

        Raises:
            ConfigError: On an invalid tower or mismatched embed_dim.

        """
        self.a.validate("encoder_a")
        self.b.validate("encoder_b")
        if self.a.embed_dim != self.b.embed_dim:
            raise ConfigError(f"encoder_a.embed_dim ({self.a.embed_dim}) must equal encoder_b.embed_dim ({self.b.embed_dim})")
