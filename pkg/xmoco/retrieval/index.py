from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array, NumericConfig
from xmoco.errors import IndexBuildError, InvalidArgumentError, ShapeError
from xmoco.numkit import ordered_matmul

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    """
    Candidates for one query, best first.

    Attributes:
        query_id (str | None): The query's id, when it has one.
        ids (tuple[str, ...]): Candidate ids, no duplicates.
        scores (tuple[float, ...]): Dot-product scores, non-increasing.

    """

    query_id: str | None
    ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def head(self, k: int) -> RankedList:
        """Keep the first k candidates."""
        return RankedList(self.query_id, self.ids[:k], self.scores[:k])

    def rank_of(self, candidate_id: str) -> int | None:
        """Get the 1-based rank of a candidate, or None if it was not retrieved."""
        try:
            return self.ids.index(candidate_id) + 1
        except ValueError:
            return None

    def to_json_dict(self) -> dict[str, list[str] | list[float]]:
        """Serialize as ``{"ids": [...], "scores": [...]}``."""
        return {"ids": list(self.ids), "scores": list(self.scores)}


@dataclass(frozen=True)
class RetrievalIndex:
    """
    Unit-norm embeddings searchable by exact dot product.

    Attributes:
        ids (tuple[str, ...]): Unique ids, aligned with the rows.
        embeddings (Array): (N, d) read-only matrix of unit-norm rows.

    """

    ids: tuple[str, ...]
    embeddings: Array
    _id_rank: npt.NDArray[np.int64] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        # Position of each id in ascending id order, used to break score ties
        order = np.argsort(np.array(self.ids, dtype=object), kind="stable")
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        object.__setattr__(self, "_id_rank", rank)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        """Get the embedding dimension."""
        return int(self.embeddings.shape[1])

    def scores(self, queries: Array) -> Array:
        """Score every query row against every indexed row, (Q, N); each row is independent of the others."""
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise ShapeError(f"Queries must have shape (Q, {self.dim}), got {queries.shape}")
        return ordered_matmul(queries, self.embeddings.T)

    def rank(self, scores: Array, k: int, query_id: str | None = None) -> RankedList:
        """Turn one row of scores into the top-k list, ties broken by ascending id."""
        order = np.lexsort((self._id_rank, -scores))[: min(k, len(self.ids))]
        return RankedList(query_id, tuple(self.ids[i] for i in order), tuple(float(scores[i]) for i in order))


def build_index(ids: Sequence[str], embeddings: Sequence[npt.ArrayLike] | Array) -> RetrievalIndex:
    """
    Build an exact dot-product index.

    Args:
        ids (Sequence[str]): Unique ids, one per row.
        embeddings (Sequence[ArrayLike] | Array): Unit-norm embeddings, row order preserved.

    Returns:
        RetrievalIndex: The index.

    Raises:
        IndexBuildError: On a duplicate id, a misaligned id list, a non-finite value or a row whose norm is more
            than 1e-9 away from 1.

    """
    matrix = np.array(embeddings, dtype=np.float64)
    if matrix.size == 0 and matrix.ndim == 1:
        matrix = np.zeros((0, 0))
    if matrix.ndim != 2:
        raise IndexBuildError(f"Embeddings must form a matrix, got shape {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise IndexBuildError(f"Got {len(ids)} ids for {matrix.shape[0]} embeddings")
    seen: set[str] = set()
    for item_id in ids:
        if item_id in seen:
            raise IndexBuildError(f"Duplicate id {item_id!r}")
        seen.add(item_id)
    if not np.isfinite(matrix).all():
        raise IndexBuildError("Embeddings must be finite")
    norms = np.linalg.norm(matrix, axis=1)
    off = np.flatnonzero(np.abs(norms - 1.0) > NumericConfig.UNIT_NORM_TOL)
    if off.size:
        raise IndexBuildError(f"Row {int(off[0])} ({ids[int(off[0])]!r}) has norm {norms[off[0]]:.12g}, expected 1")
    matrix.setflags(write=False)
    LOGGER.debug(f"Built index of {matrix.shape[0]} rows (dim {matrix.shape[1]})")
    return RetrievalIndex(tuple(ids), matrix)


def top_k(index: RetrievalIndex, query: npt.ArrayLike, k: int, query_id: str | None = None) -> RankedList:
    """
    Exhaustive top-k by dot product.

    Args:
        index (RetrievalIndex): The candidates.
        query (ArrayLike): Query embedding of the index's dimension.
        k (int): Number of results; fewer when the index is smaller.
        query_id (str | None): Id attached to the result.

    Returns:
        RankedList: The min(k, N) best candidates, scores descending, ties by ascending id.

    Raises:
        InvalidArgumentError: If k < 1 or the index is empty.
        ShapeError: If the query has the wrong dimension.

    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise InvalidArgumentError("Cannot query an empty index")
    vector = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return index.rank(index.scores(vector)[0], k, query_id)


def top_k_batch(index: RetrievalIndex, queries: Array, k: int, query_ids: Sequence[str]) -> list[RankedList]:
    """Run :func:`top_k` for every query row; results equal the single-query ones bit for bit."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise InvalidArgumentError("Cannot query an empty index")
    if len(query_ids) != len(queries):
        raise ShapeError(f"Got {len(query_ids)} query ids for {len(queries)} queries")
    scores = index.scores(queries)
    return [index.rank(row, k, query_id) for row, query_id in zip(scores, query_ids, strict=True)]
