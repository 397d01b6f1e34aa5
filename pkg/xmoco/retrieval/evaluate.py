from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from typing import TYPE_CHECKING

from xmoco.constants import GainKind, Grade, MetricConfig, Modality
from xmoco.errors import MetricInputError
from xmoco.model.encoders import embed_matrix
from xmoco.retrieval.index import RankedList, build_index, top_k_batch
from xmoco.retrieval.metrics import MetricsReport, map_metric, ndcg_at_k, recall_at_k

if TYPE_CHECKING:
    from xmoco.data.pairs import PairDataset
    from xmoco.model.moco import TwoTowerState

LOGGER = logging.getLogger(__name__)


def graded_lists(
    ranked: Sequence[RankedList],
    judgments: Mapping[str, Mapping[str, Grade]] | None = None,
) -> list[list[Grade]]:
    """
    Grade every retrieved candidate.

    With judgments, ungraded candidates count as 0; without, a query's same-id partner gets the top grade.
    Judgments relate pair ids, so the entry of query id q grades both the modality-a and the modality-b query q.

    """
    if judgments is None:
        return [[MetricConfig.GRADE_MAX if cid == r.query_id else MetricConfig.GRADE_MIN for cid in r.ids] for r in ranked]
    return [[judgments.get(r.query_id or "", {}).get(cid, MetricConfig.GRADE_MIN) for cid in r.ids] for r in ranked]


def evaluate(
    state: TwoTowerState,
    eval_set: PairDataset,
    ks: Sequence[int] = MetricConfig.RECALL_KS,
    judgments: Mapping[str, Mapping[str, Grade]] | None = None,
    gain: GainKind = GainKind.LINEAR,
    ndcg_ks: Sequence[int] = MetricConfig.NDCG_KS,
    map_threshold: int = MetricConfig.MAP_THRESHOLD,
) -> MetricsReport:
    """
    Cross-modal retrieval quality of the query encoders on held-out pairs.

    Both modalities are embedded and indexed; every pair queries the other modality's index and its same-id
    partner is the correct answer. NDCG and MAP are computed over each query's top-30 list in both directions.

    Args:
        state (TwoTowerState): The model; only the query encoders are used.
        eval_set (PairDataset): Held-out pairs.
        ks (Sequence[int]): Recall cut-offs.
        judgments (Mapping[str, Mapping[str, Grade]] | None): Optional graded relevance, query id to candidate
            id to 0..6 grade.
        gain (GainKind): NDCG gain.
        ndcg_ks (Sequence[int]): NDCG cut-offs.
        map_threshold (int): Grades strictly above this are relevant for MAP.

    Returns:
        MetricsReport: Recall per direction, NDCG, MAP and the query count.

    Raises:
        EmptyDatasetError: If the evaluation set is empty.
        MetricInputError: If a cut-off is below 1.
        DegenerateEmbeddingError: If a pair embeds to zero.

    """
    eval_set.require_nonempty("evaluation set")
    if any(k < 1 for k in (*ks, *ndcg_ks)):
        raise MetricInputError(f"Cut-offs must be >= 1, got {list(ks)} and {list(ndcg_ks)}")
    ids = eval_set.ids
    embeddings = {
        Modality.A: embed_matrix(state.query_a, eval_set.features(Modality.A)),
        Modality.B: embed_matrix(state.query_b, eval_set.features(Modality.B)),
    }
    indices = {modality: build_index(ids, matrix) for modality, matrix in embeddings.items()}
    depth = max(*ks, *ndcg_ks, MetricConfig.JUDGED_DEPTH)

    ranked = {
        modality: top_k_batch(indices[modality.other], embeddings[modality], depth, ids)
        for modality in (Modality.A, Modality.B)
    }
    truth = {pair_id: pair_id for pair_id in ids}
    recall = {
        modality: {k: recall_at_k(ranked[modality], truth, k) for k in ks}
        for modality in (Modality.A, Modality.B)
    }

    judged = [r.head(MetricConfig.JUDGED_DEPTH) for r in (*ranked[Modality.A], *ranked[Modality.B])]
    graded = graded_lists(judged, judgments)
    report = MetricsReport(
        recall_a2b=recall[Modality.A],
        recall_b2a=recall[Modality.B],
        ndcg={k: ndcg_at_k(graded, k, gain) for k in ndcg_ks},
        map=map_metric(graded, map_threshold),
        num_queries=len(ids),
    )
    LOGGER.debug(f"Evaluated {len(ids)} pairs: {report.to_json_dict()}")
    return report
