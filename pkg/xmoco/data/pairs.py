from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array, Modality, SplitTag
from xmoco.errors import DatasetFormatError, EmptyDatasetError, InvalidArgumentError, NonFiniteError, ShapeError
from xmoco.utils.file import iter_jsonl, write_jsonl

LOGGER = logging.getLogger(__name__)


def _frozen_vector(values: npt.ArrayLike, what: str) -> Array:
    array = np.array(values, dtype=np.float64)
    if array.ndim != 1:
        raise ShapeError(f"{what} must be a vector, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise NonFiniteError(f"{what} has non-finite values")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ModalityPair:
    """
    One aligned sample: two raw feature vectors sharing an id.

    Attributes:
        id (str): Unique identifier within its dataset.
        feat_a (Array): Modality-a features (the image role).
        feat_b (Array): Modality-b features (the text role).

    """

    id: str
    feat_a: Array
    feat_b: Array

    def __post_init__(self) -> None:
        object.__setattr__(self, "feat_a", _frozen_vector(self.feat_a, f"Pair {self.id!r} feat_a"))
        object.__setattr__(self, "feat_b", _frozen_vector(self.feat_b, f"Pair {self.id!r} feat_b"))

    def __eq__(self, other: object) -> bool:
        """Determine if two pairs have the same id and identical features."""
        if not isinstance(other, ModalityPair):
            return False
        return self.id == other.id and np.array_equal(self.feat_a, other.feat_a) and np.array_equal(self.feat_b, other.feat_b)

    def __hash__(self) -> int:
        """Hash by id (ids are unique within a dataset)."""
        return hash(self.id)

    def features(self, modality: Modality) -> Array:
        """Get the feature vector of one modality."""
        return self.feat_a if modality is Modality.A else self.feat_b


@dataclass(frozen=True)
class PairDataset:
    """
    An ordered, immutable collection of pairs with unique ids and consistent dimensions.

    Attributes:
        pairs (tuple[ModalityPair, ...]): The pairs, in order.
        split (SplitTag): Which split the pairs form.

    """

    pairs: tuple[ModalityPair, ...]
    split: SplitTag = SplitTag.ALL
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        index: dict[str, int] = {}
        for i, pair in enumerate(self.pairs):
            if pair.id in index:
                raise DatasetFormatError(f"Duplicate id {pair.id!r} (positions {index[pair.id]} and {i})")
            index[pair.id] = i
            first = self.pairs[0]
            if pair.feat_a.shape != first.feat_a.shape or pair.feat_b.shape != first.feat_b.shape:
                raise ShapeError(
                    f"Pair {pair.id!r}: dims ({pair.feat_a.size}, {pair.feat_b.size}) differ from "
                    f"({first.feat_a.size}, {first.feat_b.size})",
                )
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[ModalityPair]:
        return iter(self.pairs)

    def __getitem__(self, i: int) -> ModalityPair:
        return self.pairs[i]

    @property
    def ids(self) -> list[str]:
        """Get the ids in order."""
        return [pair.id for pair in self.pairs]

    @property
    def dim_a(self) -> int:
        """Get the modality-a feature length (0 for an empty dataset)."""
        return int(self.pairs[0].feat_a.size) if self.pairs else 0

    @property
    def dim_b(self) -> int:
        """Get the modality-b feature length (0 for an empty dataset)."""
        return int(self.pairs[0].feat_b.size) if self.pairs else 0

    def features(self, modality: Modality) -> Array:
        """Stack one modality's features into a (N, dim) matrix."""
        if not self.pairs:
            return np.zeros((0, 0))
        return np.stack([pair.features(modality) for pair in self.pairs])

    def get(self, pair_id: str) -> ModalityPair | None:
        """Look up a pair by id."""
        position = self._index.get(pair_id)
        return self.pairs[position] if position is not None else None

    def subset(self, positions: Sequence[int], split: SplitTag) -> PairDataset:
        """Create a dataset from the pairs at the given positions."""
        return PairDataset(tuple(self.pairs[i] for i in positions), split)

    def require_nonempty(self, what: str = "dataset") -> None:
        """
        Ensure the dataset has pairs.

        Raises:
            EmptyDatasetError: If it has none.

        """
        if not self.pairs:
            raise EmptyDatasetError(f"The {what} ({self.split.value} split) has no pairs")


def _parse_features(value: Any, key: str, path: Path, line_number: int) -> list[float]:  # noqa: ANN401
    if not isinstance(value, list) or not value:
        raise DatasetFormatError(f"{path}:{line_number}: {key!r} must be a non-empty list of numbers")
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise DatasetFormatError(f"{path}:{line_number}: {key!r} contains a non-number ({item!r})")
        if not math.isfinite(item):
            raise DatasetFormatError(f"{path}:{line_number}: {key!r} contains a non-finite value")
    return [float(item) for item in value]


def load_pairs(path: Path, split: SplitTag = SplitTag.ALL) -> PairDataset:
    """
    Read a JSON Lines pair file: one ``{"id": str, "feat_a": [...], "feat_b": [...]}`` per line.

    Dimensions are checked against the first record.

    Args:
        path (Path): The file to read.
        split (SplitTag): Tag for the resulting dataset.

    Returns:
        PairDataset: The pairs in file order.

    Raises:
        DatasetFormatError: On a malformed line (with its number), a dimension mismatch, or a duplicate id.
        EmptyDatasetError: If the file holds no records.

    """
    pairs: list[ModalityPair] = []
    seen: dict[str, int] = {}
    dims: tuple[int, int] | None = None
    for line_number, record in iter_jsonl(path):
        pair_id = record.get("id")
        if not isinstance(pair_id, str) or not pair_id:
            raise DatasetFormatError(f"{path}:{line_number}: 'id' must be a non-empty string")
        feat_a = _parse_features(record.get("feat_a"), "feat_a", path, line_number)
        feat_b = _parse_features(record.get("feat_b"), "feat_b", path, line_number)
        if dims is None:
            dims = (len(feat_a), len(feat_b))
        elif len(feat_a) != dims[0]:
            raise DatasetFormatError(f"{path}:{line_number}: feat_a has length {len(feat_a)}, expected dim {dims[0]}")
        elif len(feat_b) != dims[1]:
            raise DatasetFormatError(f"{path}:{line_number}: feat_b has length {len(feat_b)}, expected dim {dims[1]}")
        if pair_id in seen:
            raise DatasetFormatError(f"{path}:{line_number}: duplicate id {pair_id!r} (first on line {seen[pair_id]})")
        seen[pair_id] = line_number
        pairs.append(ModalityPair(pair_id, np.array(feat_a), np.array(feat_b)))

    if not pairs:
        raise EmptyDatasetError(f"{path}: no pairs found (empty dataset)")
    LOGGER.info(f"Loaded {len(pairs)} pairs from {path} (dims {dims})")
    return PairDataset(tuple(pairs), split)


def write_pairs(dataset: PairDataset, path: Path) -> int:
    """Write a dataset in the pair-file format (fields in the order id, feat_a, feat_b)."""
    return write_jsonl(
        path,
        ({"id": pair.id, "feat_a": pair.feat_a.tolist(), "feat_b": pair.feat_b.tolist()} for pair in dataset),
    )


def split(
    dataset: PairDataset,
    fractions: tuple[float, float, float],
    seed: int,
    required: Sequence[SplitTag] = (SplitTag.TRAIN,),
) -> tuple[PairDataset, PairDataset, PairDataset]:
    """
    Shuffle with a seed, then cut contiguous train/val/test slices.

    Slice boundaries are the rounded cumulative fractions, so the three parts are disjoint and exhaustive.

    Args:
        dataset (PairDataset): The pairs to split.
        fractions (tuple[float, float, float]): Train, val and test fractions, summing to 1.
        seed (int): Shuffle seed.
        required (Sequence[SplitTag]): Splits that must come out non-empty.

    Returns:
        tuple[PairDataset, PairDataset, PairDataset]: The train, val and test datasets.

    Raises:
        InvalidArgumentError: If the fractions are negative or do not sum to 1.
        EmptyDatasetError: If a required split is empty.

    """
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise InvalidArgumentError(f"Split fractions must be non-negative and sum to 1, got {fractions}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    cut_train = round(n * fractions[0])
    cut_val = round(n * (fractions[0] + fractions[1]))
    parts = (
        dataset.subset(order[:cut_train].tolist(), SplitTag.TRAIN),
        dataset.subset(order[cut_train:cut_val].tolist(), SplitTag.VAL),
        dataset.subset(order[cut_val:].tolist(), SplitTag.TEST),
    )
    for part in parts:
        if part.split in required:
            part.require_nonempty()
    LOGGER.debug(f"Split {n} pairs into {[len(p) for p in parts]} (seed {seed})")
    return parts


def batches(
    dataset: PairDataset,
    batch_size: int,
    epoch_seed: int | np.random.Generator,
) -> list[tuple[ModalityPair, ...]]:
    """
    Shuffle and cut into fixed-size batches, dropping the final partial batch.

    Args:
        dataset (PairDataset): The pairs to batch.
        batch_size (int): Pairs per batch.
        epoch_seed (int | Generator): Seed for the shuffle, or a generator already positioned at the right state.

    Returns:
        list[tuple[ModalityPair, ...]]: ``len(dataset) // batch_size`` batches.

    Raises:
        InvalidArgumentError: If batch_size < 1.

    """
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    rng = epoch_seed if isinstance(epoch_seed, np.random.Generator) else np.random.default_rng(epoch_seed)
    order = rng.permutation(len(dataset))
    return [
        tuple(dataset.pairs[i] for i in order[start : start + batch_size])
        for start in range(0, len(dataset) - batch_size + 1, batch_size)
    ]
