from __future__ import annotations

import logging
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeAlias

import numpy as np

from xmoco.constants import GainKind, Grade, MetricConfig
from xmoco.errors import MetricInputError
from xmoco.retrieval.index import RankedList
from xmoco.utils.file import iter_jsonl

LOGGER = logging.getLogger(__name__)

Truth: TypeAlias = Mapping[str, "str | Collection[str]"]


def _check_k(k: int) -> None:
    if k < 1:
        raise MetricInputError(f"k must be >= 1, got {k}")


def recall_at_k(ranked: Sequence[RankedList], truth: Truth, k: int) -> float:
    """
    Fraction of queries with a correct candidate among their top k.

    A truth entry may be a single id or a collection of ids (a hit is any of them within the top k).

    Args:
        ranked (Sequence[RankedList]): One list per query, each carrying its query id.
        truth (Truth): Query id to correct candidate id(s).
        k (int): Cut-off.

    Returns:
        float: R@k in [0, 1].

    Raises:
        MetricInputError: If there are no queries, k < 1, or a query has no truth entry.

    """
    _check_k(k)
    if not ranked:
        raise MetricInputError("recall_at_k needs at least one query")
    hits = 0
    for ranked_list in ranked:
        if ranked_list.query_id is None or ranked_list.query_id not in truth:
            raise MetricInputError(f"No ground truth for query {ranked_list.query_id!r}")
        correct = truth[ranked_list.query_id]
        wanted = {correct} if isinstance(correct, str) else set(correct)
        if not wanted:
            raise MetricInputError(f"Empty ground truth for query {ranked_list.query_id!r}")
        hits += any(candidate in wanted for candidate in ranked_list.ids[:k])
    return hits / len(ranked)


def _check_graded(graded: Sequence[Sequence[Grade]]) -> None:
    if not graded:
        raise MetricInputError("Graded metrics need at least one query")
    for i, scores in enumerate(graded):
        if len(scores) < 1:
            raise MetricInputError(f"Query {i} has no graded results")
        for score in scores:
            is_int = isinstance(score, (int, np.integer)) and not isinstance(score, bool)
            if not is_int or not MetricConfig.GRADE_MIN <= score <= MetricConfig.GRADE_MAX:
                raise MetricInputError(
                    f"Query {i}: score {score!r} is outside {MetricConfig.GRADE_MIN}..{MetricConfig.GRADE_MAX}",
                )


def dcg_at_k(scores: Sequence[Grade], k: int, gain: GainKind = GainKind.LINEAR) -> float:
    """Discounted cumulative gain of the first k scores (discount log2(rank + 1))."""
    rel = np.asarray(scores[:k], dtype=np.float64)
    gains = rel if gain is GainKind.LINEAR else np.power(2.0, rel) - 1.0
    return float(np.sum(gains / np.log2(np.arange(2, rel.size + 2))))


def ndcg_at_k(graded: Sequence[Sequence[Grade]], k: int, gain: GainKind = GainKind.LINEAR) -> float:
    """
    Mean NDCG@k over queries with graded relevance.

    The ideal ordering sorts each query's own scores descending; queries without any relevance score 0.

    Args:
        graded (Sequence[Sequence[Grade]]): Per query, the relevance (0..6) of each result in rank order.
        k (int): Cut-off.
        gain (GainKind): Linear (rel) or exponential (2^rel - 1) gain.

    Returns:
        float: NDCG@k in [0, 1].

    Raises:
        MetricInputError: If a score is out of range, a list is empty or k < 1.

    """
    _check_k(k)
    _check_graded(graded)
    values = []
    for scores in graded:
        ideal = dcg_at_k(sorted(scores, reverse=True), k, gain)
        values.append(dcg_at_k(scores, k, gain) / ideal if ideal > 0 else 0.0)
    return float(np.mean(values))


def average_precision(scores: Sequence[Grade], threshold: int = MetricConfig.MAP_THRESHOLD) -> float:
    """Average precision with relevance ``score > threshold`` (0 when nothing is relevant)."""
    relevant = np.asarray(scores) > threshold
    if not relevant.any():
        return 0.0
    ranks = np.flatnonzero(relevant) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def map_metric(graded: Sequence[Sequence[Grade]], threshold: int = MetricConfig.MAP_THRESHOLD) -> float:
    """
    Mean average precision over queries, binarizing graded relevance.

    Args:
        graded (Sequence[Sequence[Grade]]): Per query, the relevance (0..6) of each result in rank order.
        threshold (int): A result is relevant if its score is strictly higher than this.

    Returns:
        float: MAP in [0, 1].

    Raises:
        MetricInputError: If a score is out of range or a list is empty.

    """
    _check_graded(graded)
    return float(np.mean([average_precision(scores, threshold) for scores in graded]))


def combine_ratings(per_annotator: Sequence[Sequence[int]]) -> list[Grade]:
    """
    Sum three annotators' 0/1/2 ratings of the same results into 0..6 grades.

    Raises:
        MetricInputError: If there are not three equally long rows or a rating is out of range.

    """
    if len(per_annotator) != 3:
        raise MetricInputError(f"Expected ratings from 3 annotators, got {len(per_annotator)}")
    lengths = {len(row) for row in per_annotator}
    if len(lengths) != 1:
        raise MetricInputError(f"Annotator rating lists differ in length: {sorted(lengths)}")
    for a, row in enumerate(per_annotator):
        for rating in row:
            if isinstance(rating, bool) or not isinstance(rating, int) or not 0 <= rating <= MetricConfig.RATING_MAX:
                raise MetricInputError(f"Annotator {a}: rating {rating!r} is outside 0..{MetricConfig.RATING_MAX}")
    return [sum(column) for column in zip(*per_annotator, strict=True)]


@dataclass(frozen=True)
class Judgment:
    """
    Graded results of one query.

    Attributes:
        query_id (str): The query.
        grades (tuple[Grade, ...]): 0..6 grade of each result, in rank order.
        candidate_ids (tuple[str, ...] | None): The graded candidates, when recorded.

    """

    query_id: str
    grades: tuple[Grade, ...]
    candidate_ids: tuple[str, ...] | None = None


def _record_grades(record: dict[str, Any]) -> list[Grade]:
    if "ratings" in record:
        ratings = record["ratings"]
        if not isinstance(ratings, list) or not all(isinstance(row, list) for row in ratings):
            raise MetricInputError("'ratings' must be a list of per-annotator lists")
        grades = combine_ratings(ratings)
    else:
        grades = record["scores"]
        if not isinstance(grades, list):
            raise MetricInputError("'scores' must be a list")
    _check_graded([grades])
    return grades


def _parse_judgment(record: dict[str, Any], where: str) -> Judgment:
    query_id = record.get("query_id")
    if not isinstance(query_id, str) or not query_id:
        raise MetricInputError(f"{where}: 'query_id' must be a non-empty string")
    if ("scores" in record) == ("ratings" in record):
        raise MetricInputError(f"{where}: give exactly one of 'scores' or 'ratings'")
    try:
        grades = _record_grades(record)
    except MetricInputError as e:
        raise MetricInputError(f"{where}: {e}") from e
    grades = grades[: MetricConfig.JUDGED_DEPTH]
    candidates = record.get("candidate_ids")
    if candidates is not None:
        if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
            raise MetricInputError(f"{where}: 'candidate_ids' must be a list of strings")
        candidates = candidates[: MetricConfig.JUDGED_DEPTH]
        if len(candidates) != len(grades):
            raise MetricInputError(f"{where}: {len(candidates)} candidate ids for {len(grades)} grades")
    return Judgment(query_id, tuple(int(g) for g in grades), tuple(candidates) if candidates is not None else None)


def load_judgments(path: Path) -> list[Judgment]:
    """
    Read graded judgments, one JSON object per line.

    Each line is ``{"query_id": str, "scores": [0..6, ...]}`` or ``{"query_id": str, "ratings": [[0..2, ...] x 3]}``,
    optionally with ``"candidate_ids"`` naming the graded results. Only the first 30 results count.

    Raises:
        MetricInputError: On an invalid record (with its line) or an empty file.
        DatasetFormatError: On malformed JSON.

    """
    judgments = [_parse_judgment(record, f"{path}:{line_number}") for line_number, record in iter_jsonl(path)]
    if not judgments:
        raise MetricInputError(f"{path}: no judgments found")
    LOGGER.info(f"Loaded {len(judgments)} judged queries from {path}")
    return judgments


def judgment_map(judgments: Sequence[Judgment]) -> dict[str, dict[str, Grade]]:
    """
    Index judgments by query id and candidate id.

    Raises:
        MetricInputError: If a judgment does not name its candidates.

    """
    mapping: dict[str, dict[str, Grade]] = {}
    for judgment in judgments:
        if judgment.candidate_ids is None:
            raise MetricInputError(f"Judgment of {judgment.query_id!r} has no candidate_ids")
        mapping.setdefault(judgment.query_id, {}).update(zip(judgment.candidate_ids, judgment.grades, strict=True))
    return mapping


def graded_summary(
    graded: Sequence[Sequence[Grade]],
    ks: Sequence[int] = MetricConfig.NDCG_KS,
    gain: GainKind = GainKind.LINEAR,
    threshold: int = MetricConfig.MAP_THRESHOLD,
) -> dict[str, float]:
    """Compute NDCG at each cut-off and MAP, reported x100 with one decimal (keys ``ndcg5``, ..., ``map``)."""
    summary = {f"ndcg{k}": _percent(ndcg_at_k(graded, k, gain)) for k in ks}
    summary["map"] = _percent(map_metric(graded, threshold))
    return summary


def _percent(value: float) -> float:
    return round(100.0 * value, 1)


@dataclass(frozen=True)
class MetricsReport:
    """
    Retrieval quality of a model on an evaluation set; every value lies in [0, 1].

    Attributes:
        recall_a2b (dict[int, float]): R@k for modality-a queries against modality-b candidates.
        recall_b2a (dict[int, float]): R@k for modality-b queries against modality-a candidates.
        ndcg (dict[int, float]): NDCG@k over both directions' ranked lists.
        map (float): MAP over both directions' ranked lists.
        num_queries (int): Queries per direction.

    """

    recall_a2b: dict[int, float]
    recall_b2a: dict[int, float]
    ndcg: dict[int, float]
    map: float
    num_queries: int

    def recall_json(self) -> dict[str, float]:
        """Get the recall part of :meth:`to_json_dict`."""
        out = {f"i2t_r{k}": _percent(v) for k, v in sorted(self.recall_a2b.items())}
        out.update({f"t2i_r{k}": _percent(v) for k, v in sorted(self.recall_b2a.items())})
        return out

    def to_json_dict(self) -> dict[str, float | int]:
        """Flatten into the report layout: values x100 with one decimal, plus the query count."""
        out: dict[str, float | int] = {**self.recall_json()}
        out.update({f"ndcg{k}": _percent(v) for k, v in sorted(self.ndcg.items())})
        out["map"] = _percent(self.map)
        out["num_queries"] = self.num_queries
        return out

