from __future__ import annotations

import json
import logging
import struct
import zlib
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from xmoco.constants import Array, CheckpointConfig
from xmoco.errors import CheckpointFormatError, ConfigError, ShapeError
from xmoco.model.encoders import EncoderConfig, EncoderParams, TowerPair
from xmoco.model.moco import NegativeQueue, TwoTowerState, trainable_params
from xmoco.numkit import ParamSet
from xmoco.training.config import TrainConfig
from xmoco.training.optim import AdamState
from xmoco.utils.file import canonical_json, get_recent_files

LOGGER = logging.getLogger(__name__)

TOWER_SLOTS = ("query_a", "query_b", "momentum_a", "momentum_b")


@dataclass(frozen=True)
class Checkpoint:
    """
    A complete snapshot of training, sufficient to resume it bit for bit.

    Attributes:
        train (TrainConfig): Configuration of the run.
        towers (TowerPair): Architecture of both towers.
        state (TwoTowerState): Query and momentum parameters, queues and temperature.
        optimizer (AdamState): Moment estimates and their step counter.
        step (int): Global step after which the snapshot was taken.
        rng_state (bytes): Serialized state of the shuffle generator for the epoch the next step belongs to.
        version (int): Format version.

    """

    train: TrainConfig
    towers: TowerPair
    state: TwoTowerState
    optimizer: AdamState
    step: int
    rng_state: bytes
    version: int = CheckpointConfig.VERSION


def rng_state_bytes(rng: np.random.Generator) -> bytes:
    """Serialize a generator's bit-generator state."""
    return canonical_json(rng.bit_generator.state).encode("utf-8")


def rng_from_bytes(blob: bytes) -> np.random.Generator:
    """
    Rebuild a generator from :func:`rng_state_bytes` output.

    Raises:
        CheckpointFormatError: If the blob is not a recognised generator state.

    """
    try:
        state = json.loads(blob.decode("utf-8"))
        bit_generator = getattr(np.random, state["bit_generator"])()
        bit_generator.state = state
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as e:
        raise CheckpointFormatError(f"Invalid RNG state in checkpoint: {e}") from e
    return np.random.Generator(bit_generator)


# -- Encoding -------------------------------------------------------------------------------------------


def _pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _pack_tensor_table(tensors: Mapping[str, Array]) -> bytes:
    out = bytearray(_pack_u32(len(tensors)))
    for name in sorted(tensors):
        # scalars keep rank 0
        array = np.asarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        out += _pack_u32(len(encoded)) + encoded
        out += _pack_u32(array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
        out += array.tobytes(order="C")
    return bytes(out)


def _tensor_entries(ckpt: Checkpoint) -> dict[str, Array]:
    state = ckpt.state
    tensors: dict[str, Array] = {}
    for slot in TOWER_SLOTS:
        tensors.update(getattr(state, slot).prefixed(f"{slot}/"))
    tensors["log_tau"] = np.array(state.log_tau)
    tensors.update(ckpt.optimizer.first.prefixed("optim/first/"))
    tensors.update(ckpt.optimizer.second.prefixed("optim/second/"))
    tensors["optim/step"] = np.array(float(ckpt.optimizer.step))
    tensors["step"] = np.array(float(ckpt.step))
    return tensors


def _queue_entries(state: TwoTowerState) -> dict[str, Array]:
    return {
        "queue_a": state.queue_a.entries,
        "queue_b": state.queue_b.entries,
        "queue_a.total_pushed": np.array(float(state.queue_a.total_pushed)),
        "queue_b.total_pushed": np.array(float(state.queue_b.total_pushed)),
    }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize a checkpoint to its binary layout (see :func:`save_checkpoint`)."""
    blob = canonical_json(
        {"train": ckpt.train.to_dict(), "encoder_a": ckpt.towers.a.to_dict(), "encoder_b": ckpt.towers.b.to_dict()},
    ).encode("utf-8")
    body = bytearray(CheckpointConfig.MAGIC)
    body += _pack_u32(ckpt.version)
    body += _pack_u32(len(blob)) + blob
    body += _pack_tensor_table(_tensor_entries(ckpt))
    body += _pack_tensor_table(_queue_entries(ckpt.state))
    body += _pack_u32(len(ckpt.rng_state)) + ckpt.rng_state
    body += _pack_u32(zlib.crc32(body) & 0xFFFFFFFF)
    return bytes(body)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    """
    Write a checkpoint file.

    Layout (little-endian): magic ``XMCO``; u32 version; u32-length-prefixed canonical JSON of the train and
    encoder configs; the tensor table (u32 count, then per tensor u32 name length, UTF-8 name, u32 rank,
    u64 dims, f64 values); the queue table in the same encoding; u32-length-prefixed RNG state; and a u32
    CRC32 of every preceding byte.

    The file is written to a sibling temporary path and moved into place.

    Args:
        path (Path): Destination file; parent folders are created.
        ckpt (Checkpoint): The snapshot.

    Returns:
        Path: The written path.

    """
    data = encode_checkpoint(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + ".tmp")
    temporary.write_bytes(data)
    temporary.replace(path)
    LOGGER.info(f"Saved checkpoint at step {ckpt.step} to {path} ({len(data)} bytes)")
    return path


# -- Decoding -------------------------------------------------------------------------------------------


class _Reader:
    """Bounds-checked cursor over checkpoint bytes."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise CheckpointFormatError(f"Checkpoint is truncated (reading {what} at byte {self.offset})")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return int(struct.unpack("<I", self.take(4, what))[0])

    def tensor_table(self, what: str) -> dict[str, Array]:
        tensors: dict[str, Array] = {}
        for _ in range(self.u32(f"{what} count")):
            raw_name = self.take(self.u32(f"{what} name length"), f"{what} name")
            try:
                name = raw_name.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CheckpointFormatError(f"Invalid tensor name in {what}") from e
            rank = self.u32(f"rank of {name!r}")
            dims = struct.unpack(f"<{rank}Q", self.take(8 * rank, f"dims of {name!r}"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            values = np.frombuffer(self.take(8 * count, f"values of {name!r}"), dtype="<f8")
            if name in tensors:
                raise CheckpointFormatError(f"Duplicate tensor {name!r} in {what}")
            tensors[name] = values.astype(np.float64).reshape(dims)
        return tensors


def _strip(tensors: Mapping[str, Array], prefix: str) -> dict[str, Array]:
    return {name[len(prefix) :]: array for name, array in tensors.items() if name.startswith(prefix)}


def _scalar(tensors: Mapping[str, Array], name: str) -> float:
    array = tensors[name]
    if array.shape != ():
        raise ValueError(f"{name!r} must be a scalar, got shape {array.shape}")
    return float(array)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Decode checkpoint bytes; see :func:`load_checkpoint`.

    Raises:
        CheckpointFormatError: On any violation; nothing is returned partially.

    """
    reader = _Reader(data)
    if reader.take(len(CheckpointConfig.MAGIC), "magic") != CheckpointConfig.MAGIC:
        raise CheckpointFormatError(f"{source}: not an xmoco checkpoint (bad magic bytes)")
    version = reader.u32("version")
    if version != CheckpointConfig.VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version} (expected {CheckpointConfig.VERSION})")
    blob = reader.take(reader.u32("config length"), "config")
    tensors = reader.tensor_table("tensor table")
    queues = reader.tensor_table("queue table")
    rng_state = reader.take(reader.u32("RNG state length"), "RNG state")
    stored_crc = reader.u32("checksum")
    if reader.offset != len(data):
        raise CheckpointFormatError(f"{source}: {len(data) - reader.offset} unexpected trailing bytes")
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointFormatError(f"{source}: checksum mismatch (file is corrupted)")

    try:
        config: dict[str, Any] = json.loads(blob.decode("utf-8"))
        train = TrainConfig.from_dict(config["train"])
        towers = TowerPair(EncoderConfig.from_dict(config["encoder_a"]), EncoderConfig.from_dict(config["encoder_b"]))
        towers.validate()
        params = {
            slot: EncoderParams(towers.a if slot.endswith("_a") else towers.b, _strip(tensors, f"{slot}/"))
            for slot in TOWER_SLOTS
        }
        dim = towers.a.embed_dim
        state = TwoTowerState(
            query_a=params["query_a"],
            query_b=params["query_b"],
            momentum_a=params["momentum_a"],
            momentum_b=params["momentum_b"],
            queue_a=NegativeQueue(train.queue_capacity, dim, queues["queue_a"], int(_scalar(queues, "queue_a.total_pushed"))),
            queue_b=NegativeQueue(train.queue_capacity, dim, queues["queue_b"], int(_scalar(queues, "queue_b.total_pushed"))),
            log_tau=_scalar(tensors, "log_tau"),
            momentum=train.momentum,
        )
        layout = trainable_params(state)
        optimizer = AdamState(
            int(_scalar(tensors, "optim/step")),
            layout.with_tensors(_strip(tensors, "optim/first/")),
            layout.with_tensors(_strip(tensors, "optim/second/")),
        )
        step = int(_scalar(tensors, "step"))
    except CheckpointFormatError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ShapeError, ConfigError, ValueError) as e:
        raise CheckpointFormatError(f"{source}: inconsistent checkpoint contents ({e})") from e
    rng_from_bytes(rng_state)
    return Checkpoint(train, towers, state, optimizer, step, rng_state, version)


def resolve_checkpoint_path(path: Path) -> Path:
    """
    Accept a checkpoint file or a folder, in which case its most recent checkpoint is used.

    Raises:
        CheckpointFormatError: If a folder holds no checkpoint.

    """
    if not path.is_dir():
        return path
    recent = get_recent_files(path, 1, CheckpointConfig.SUFFIX)
    if not recent:
        raise CheckpointFormatError(f"No {CheckpointConfig.SUFFIX} checkpoint found in {path}")
    LOGGER.debug(f"Using most recent checkpoint {recent[0]}")
    return recent[0]


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint` (or the newest one in a folder).

    Args:
        path (Path): A checkpoint file or a folder of checkpoints.

    Returns:
        Checkpoint: The decoded snapshot, bitwise equal to what was saved.

    Raises:
        CheckpointFormatError: On bad magic bytes, a version mismatch, truncation or a checksum failure.
        OSError: If the file cannot be read.

    """
    path = resolve_checkpoint_path(path)
    ckpt = decode_checkpoint(path.read_bytes(), str(path))
    LOGGER.info(f"Loaded checkpoint from {path} (step {ckpt.step})")
    return ckpt


def checkpoint_params(ckpt: Checkpoint) -> ParamSet:
    """Collect every parameter tensor of a checkpoint (for bitwise comparisons)."""
    return ParamSet(_tensor_entries(ckpt))
