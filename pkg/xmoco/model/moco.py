from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, TypeVar

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array, Modality, NumericConfig, TemperatureConfig
from xmoco.errors import InvalidArgumentError, NonFiniteError, ShapeError
from xmoco.model.encoders import EncoderParams, TowerPair, as_feature_matrix, embed_matrix, forward, init_encoder
from xmoco.numkit import ParamSet, Tensor, backward, concat, dot, exp, logsumexp, total
from xmoco.numkit.tensor import reshape

if TYPE_CHECKING:
    from xmoco.data.pairs import ModalityPair

LOGGER = logging.getLogger(__name__)

P = TypeVar("P", bound=ParamSet)

LOG_TAU = "log_tau"


def _check_unit_rows(rows: Array, what: str) -> None:
    if rows.size and not np.allclose(np.linalg.norm(rows, axis=1), 1.0, rtol=0.0, atol=NumericConfig.UNIT_NORM_TOL):
        raise InvalidArgumentError(f"{what} must be unit-norm")


@dataclass(frozen=True)
class NegativeQueue:
    """
    FIFO dictionary of the most recent key embeddings, used as negatives.

    Attributes:
        capacity (int): Maximum number of keys K.
        dim (int): Embedding dimension.
        entries (Array): The stored keys, oldest first, shape (len, dim).
        total_pushed (int): Number of keys ever pushed.

    """

    capacity: int
    dim: int
    entries: Array
    total_pushed: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidArgumentError(f"Queue capacity must be >= 1, got {self.capacity}")
        entries = np.array(self.entries, dtype=np.float64).reshape(-1, self.dim)
        if len(entries) > self.capacity:
            raise ShapeError(f"Queue holds {len(entries)} keys but its capacity is {self.capacity}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return int(self.entries.shape[0])

    @classmethod
    def empty(cls, capacity: int, dim: int) -> NegativeQueue:
        """Create an empty queue."""
        return cls(capacity, dim, np.zeros((0, dim)))


def queue_push(queue: NegativeQueue, keys: Sequence[npt.ArrayLike] | Array) -> NegativeQueue:
    """
    Append keys in order, evicting the oldest so that at most K remain.

    Args:
        queue (NegativeQueue): The queue to push into (left untouched).
        keys (Sequence[ArrayLike] | Array): Unit-norm keys, at most K of them.

    Returns:
        NegativeQueue: The updated queue.

    Raises:
        ShapeError: If a key has the wrong dimension or more than K keys are pushed at once.
        InvalidArgumentError: If a key is not unit-norm.

    """
    block = np.asarray(keys, dtype=np.float64)
    if block.size == 0:
        return queue
    if block.ndim != 2 or block.shape[1] != queue.dim:
        raise ShapeError(f"Queue keys must have dimension {queue.dim}, got shape {block.shape}")
    if len(block) > queue.capacity:
        raise ShapeError(f"Cannot push {len(block)} keys into a queue of capacity {queue.capacity}")
    _check_unit_rows(block, "Queue keys")
    merged = np.concatenate([queue.entries, block])[-queue.capacity :]
    return NegativeQueue(queue.capacity, queue.dim, merged, queue.total_pushed + len(block))


def clamp_log_tau(log_tau: float) -> float:
    """Keep the temperature within [0.005, 1.0]."""
    return min(max(log_tau, TemperatureConfig.LOG_MIN), TemperatureConfig.LOG_MAX)


@dataclass(frozen=True)
class TwoTowerState:
    """
    Everything the contrastive objective depends on.

    Attributes:
        query_a (EncoderParams): Query encoder of modality a (receives gradients).
        query_b (EncoderParams): Query encoder of modality b (receives gradients).
        momentum_a (EncoderParams): Momentum copy of query_a (moving average, no gradients).
        momentum_b (EncoderParams): Momentum copy of query_b.
        queue_a (NegativeQueue): Modality-a keys, negatives for b-to-a queries.
        queue_b (NegativeQueue): Modality-b keys, negatives for a-to-b queries.
        log_tau (float): Log of the learnable temperature.
        momentum (float): Momentum coefficient m.

    """

    query_a: EncoderParams
    query_b: EncoderParams
    momentum_a: EncoderParams
    momentum_b: EncoderParams
    queue_a: NegativeQueue
    queue_b: NegativeQueue
    log_tau: float
    momentum: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.momentum <= 1.0:
            raise InvalidArgumentError(f"Momentum must lie in [0, 1], got {self.momentum}")
        self.query_a.check_same_layout(self.momentum_a)
        self.query_b.check_same_layout(self.momentum_b)
        if self.query_a.config.embed_dim != self.query_b.config.embed_dim:
            raise ShapeError("Both towers must share embed_dim")

    @property
    def tau(self) -> float:
        """Get the temperature."""
        return math.exp(self.log_tau)

    def query_encoder(self, modality: Modality) -> EncoderParams:
        """Get the query encoder of one modality."""
        return self.query_a if modality is Modality.A else self.query_b

    @classmethod
    def create(cls, towers: TowerPair, *, queue_capacity: int, tau_init: float, momentum: float) -> TwoTowerState:
        """
        Initialize query encoders from their seeds, copy them into the momentum encoders and start with empty queues.

        Args:
            towers (TowerPair): Configs of both towers.
            queue_capacity (int): K.
            tau_init (float): Initial temperature.
            momentum (float): m.

        Returns:
            TwoTowerState: The initial state (momentum encoders equal the query encoders exactly).

        """
        towers.validate()
        if tau_init <= 0:
            raise InvalidArgumentError(f"tau_init must be > 0, got {tau_init}")
        query_a = init_encoder(towers.a)
        query_b = init_encoder(towers.b)
        dim = towers.a.embed_dim
        return cls(
            query_a=query_a,
            query_b=query_b,
            momentum_a=query_a,
            momentum_b=query_b,
            queue_a=NegativeQueue.empty(queue_capacity, dim),
            queue_b=NegativeQueue.empty(queue_capacity, dim),
            log_tau=clamp_log_tau(math.log(tau_init)),
            momentum=momentum,
        )


def momentum_update(theta_m: P, theta: ParamSet, m: float) -> P:
    """
    Moving-average update theta_m := m * theta_m + (1 - m) * theta.

    Args:
        theta_m (ParamSet): Momentum parameters.
        theta (ParamSet): Query parameters (never modified).
        m (float): Momentum in [0, 1].

    Returns:
        ParamSet: The new momentum parameters, same kind as ``theta_m``.

    Raises:
        InvalidArgumentError: If m is outside [0, 1].
        ShapeError: If the layouts differ.

    """
    if not 0.0 <= m <= 1.0:
        raise InvalidArgumentError(f"Momentum must lie in [0, 1], got {m}")
    updated = theta_m.zip_map(theta, lambda slow, fast: m * slow + (1.0 - m) * fast)
    return updated  # type: ignore[return-value]


def info_nce_graph(z: Tensor, positives: Tensor, negatives: Array, tau: Tensor) -> Tensor:
    """
    Differentiable InfoNCE summed over queries, with negatives taken only from ``negatives``.

    loss = sum_j [ logsumexp(z_j.p_j / tau, z_j.n_1 / tau, ...) - z_j.p_j / tau ]

    """
    batch = z.shape[0]
    pos = dot(z, positives) / tau
    neg = (z @ Tensor(negatives.T)) / tau
    logits = concat([reshape(pos, (batch, 1)), neg], axis=1)
    return total(logsumexp(logits, axis=1) - pos)


def info_nce(
    z: Sequence[npt.ArrayLike] | Array,
    p: Sequence[npt.ArrayLike] | Array,
    negs: Sequence[npt.ArrayLike] | Array,
    tau: float,
) -> float:
    """
    InfoNCE loss of queries against their positives and a shared set of negatives.

    Args:
        z (Sequence[ArrayLike] | Array): Unit-norm query embeddings.
        p (Sequence[ArrayLike] | Array): Unit-norm positive keys, paired with ``z``.
        negs (Sequence[ArrayLike] | Array): Unit-norm negative keys (may be empty).
        tau (float): Temperature.

    Returns:
        float: The summed loss (>= 0; exactly 0 without negatives).

    Raises:
        InvalidArgumentError: If tau <= 0, there are no queries, or an input is not unit-norm.
        ShapeError: If z and p are not paired or dimensions differ.

    """
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be > 0, got {tau}")
    queries = np.asarray(z, dtype=np.float64)
    positives = np.asarray(p, dtype=np.float64)
    if queries.ndim != 2 or len(queries) == 0:
        raise InvalidArgumentError("info_nce needs at least one query")
    if positives.shape != queries.shape:
        raise ShapeError(f"Queries {queries.shape} and positives {positives.shape} must be paired")
    negatives = np.asarray(negs, dtype=np.float64).reshape(-1, queries.shape[1])
    for rows, what in ((queries, "Queries"), (positives, "Positives"), (negatives, "Negatives")):
        _check_unit_rows(rows, what)
    return info_nce_graph(Tensor(queries), Tensor(positives), negatives, Tensor(tau)).item()


def total_loss(loss_a2b: float, loss_b2a: float) -> float:
    """
    Sum of both retrieval directions.

    Raises:
        NonFiniteError: If either term is not finite.

    """
    if not (math.isfinite(loss_a2b) and math.isfinite(loss_b2a)):
        raise NonFiniteError(f"Losses must be finite, got {loss_a2b} and {loss_b2a}")
    return loss_a2b + loss_b2a


@dataclass(frozen=True)
class StepOutputs:
    """
    Everything one training step computed.

    Attributes:
        z_a (Array): Query embeddings of modality a, (batch, d).
        z_b (Array): Query embeddings of modality b.
        p_a (Array): Momentum-encoder keys of modality a (positives for b-to-a queries).
        p_b (Array): Momentum-encoder keys of modality b (positives for a-to-b queries).
        keys_a (Array): This batch's modality-a keys, destined for queue_a.
        keys_b (Array): This batch's modality-b keys, destined for queue_b.
        loss_a2b (float): InfoNCE of a-queries against queue_b.
        loss_b2a (float): InfoNCE of b-queries against queue_a.
        loss_total (float): Their sum.
        negatives_a (int): Queue-a keys the b-to-a loss saw.
        negatives_b (int): Queue-b keys the a-to-b loss saw.

    """

    z_a: Array
    z_b: Array
    p_a: Array
    p_b: Array
    keys_a: Array
    keys_b: Array
    loss_a2b: float
    loss_b2a: float
    loss_total: float
    negatives_a: int
    negatives_b: int


@dataclass(frozen=True)
class StepGradients:
    """Gradients of the total loss; momentum encoders have none."""

    query_a: EncoderParams
    query_b: EncoderParams
    log_tau: float


def trainable_params(state: TwoTowerState) -> ParamSet:
    """Collect every gradient-receiving parameter into one set (``a/...``, ``b/...``, ``log_tau``)."""
    tensors: dict[str, Array] = {**state.query_a.prefixed("a/"), **state.query_b.prefixed("b/")}
    tensors[LOG_TAU] = np.array(state.log_tau)
    return ParamSet(tensors)


def with_trainable(state: TwoTowerState, params: Mapping[str, Array]) -> TwoTowerState:
    """Write a trainable set back into a state (the temperature is clamped)."""
    return replace(
        state,
        query_a=state.query_a.with_tensors(_strip(params, "a/")),
        query_b=state.query_b.with_tensors(_strip(params, "b/")),
        log_tau=clamp_log_tau(float(params[LOG_TAU])),
    )


def _strip(params: Mapping[str, Array], prefix: str) -> dict[str, Array]:
    return {name[len(prefix) :]: array for name, array in params.items() if name.startswith(prefix)}


def gradients_as_params(grads: StepGradients) -> ParamSet:
    """Flatten step gradients with the layout of :func:`trainable_params`."""
    tensors: dict[str, Array] = {**grads.query_a.prefixed("a/"), **grads.query_b.prefixed("b/")}
    tensors[LOG_TAU] = np.array(grads.log_tau)
    return ParamSet(tensors)


def training_step(state: TwoTowerState, batch: Sequence[ModalityPair]) -> tuple[StepOutputs, StepGradients]:
    """
    Compute both InfoNCE directions for one batch and the gradients of their sum.

    Keys come from the momentum encoders without gradient; negatives come from the queues only, as they were
    before this batch. The state is not modified: the caller applies the optimizer, the momentum update and
    the queue pushes afterwards.

    Args:
        state (TwoTowerState): Current parameters and queues.
        batch (Sequence[ModalityPair]): A non-empty batch.

    Returns:
        tuple[StepOutputs, StepGradients]: The step's embeddings, keys and losses, and the gradients.

    Raises:
        InvalidArgumentError: If the batch is empty.
        DegenerateEmbeddingError: If an embedding collapses to zero.
        NonFiniteError: If the loss is not finite.

    """
    if not batch:
        raise InvalidArgumentError("training_step needs a non-empty batch")
    cfg_a, cfg_b = state.query_a.config, state.query_b.config
    x_a = as_feature_matrix([pair.feat_a for pair in batch], cfg_a.input_dim)
    x_b = as_feature_matrix([pair.feat_b for pair in batch], cfg_b.input_dim)

    # Keys: momentum encoders, outside the graph
    p_a = embed_matrix(state.momentum_a, x_a)
    p_b = embed_matrix(state.momentum_b, x_b)
    negatives_a = state.queue_a.entries
    negatives_b = state.queue_b.entries

    recorded: dict[str, Tensor] = {}

    def loss_fn(leaves: Mapping[str, Tensor]) -> Tensor:
        z_a = forward(cfg_a, _strip(leaves, "a/"), Tensor(x_a))  # type: ignore[arg-type]
        z_b = forward(cfg_b, _strip(leaves, "b/"), Tensor(x_b))  # type: ignore[arg-type]
        tau = exp(leaves[LOG_TAU])
        loss_a2b = info_nce_graph(z_a, Tensor(p_b), negatives_b, tau)
        loss_b2a = info_nce_graph(z_b, Tensor(p_a), negatives_a, tau)
        recorded.update(z_a=z_a, z_b=z_b, loss_a2b=loss_a2b, loss_b2a=loss_b2a)
        return loss_a2b + loss_b2a

    grads = backward(loss_fn, trainable_params(state))

    loss_a2b = recorded["loss_a2b"].item()
    loss_b2a = recorded["loss_b2a"].item()
    outputs = StepOutputs(
        z_a=recorded["z_a"].data,
        z_b=recorded["z_b"].data,
        p_a=p_a,
        p_b=p_b,
        keys_a=p_a,
        keys_b=p_b,
        loss_a2b=loss_a2b,
        loss_b2a=loss_b2a,
        loss_total=total_loss(loss_a2b, loss_b2a),
        negatives_a=len(negatives_a),
        negatives_b=len(negatives_b),
    )
    gradients = StepGradients(
        query_a=state.query_a.with_tensors(_strip(grads, "a/")),
        query_b=state.query_b.with_tensors(_strip(grads, "b/")),
        log_tau=float(grads[LOG_TAU]),
    )
    return outputs, gradients
