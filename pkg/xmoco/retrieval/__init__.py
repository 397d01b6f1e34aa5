from xmoco.retrieval.evaluate import evaluate
from xmoco.retrieval.index import RankedList, RetrievalIndex, build_index, top_k, top_k_batch
from xmoco.retrieval.metrics import MetricsReport, combine_ratings, map_metric, ndcg_at_k, recall_at_k

__all__ = [
    "MetricsReport",
    "RankedList",
    "RetrievalIndex",
    "build_index",
    "combine_ratings",
    "evaluate",
    "map_metric",
    "ndcg_at_k",
    "recall_at_k",
    "top_k",
    "top_k_batch",
]
