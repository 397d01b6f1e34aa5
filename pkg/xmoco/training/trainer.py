from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, Any

import numpy as np

from xmoco.constants import MetricConfig
from xmoco.data.pairs import batches
from xmoco.errors import ConfigError, EmptyDatasetError, InvalidArgumentError, TrainingStepError, XmocoError
from xmoco.model.moco import (
    TwoTowerState,
    gradients_as_params,
    momentum_update,
    queue_push,
    trainable_params,
    training_step,
    with_trainable,
)
from xmoco.retrieval.evaluate import evaluate
from xmoco.training.checkpoint import Checkpoint, rng_from_bytes, rng_state_bytes
from xmoco.training.optim import AdamState, adamw_step, cosine_lr

if TYPE_CHECKING:
    from xmoco.data.pairs import ModalityPair, PairDataset
    from xmoco.model.encoders import TowerPair
    from xmoco.training.config import TrainConfig

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepRecord:
    """Losses and schedule values of one global step."""

    step: int
    lr: float
    loss_a2b: float
    loss_b2a: float
    loss_total: float
    tau: float
    negatives: int


@dataclass(frozen=True)
class EvalRecord:
    """Held-out recall after a given step."""

    step: int
    recall: dict[str, float]


@dataclass
class TrainHistory:
    """
    Per-step and per-evaluation records of a run.

    Attributes:
        steps (list[StepRecord]): One record per step, strictly increasing.
        evals (list[EvalRecord]): One record per held-out evaluation.

    """

    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)

    def add_step(self, record: StepRecord) -> None:
        """
        Append a step record.

        Raises:
            InvalidArgumentError: If the step does not follow the previous one.

        """
        if self.steps and record.step <= self.steps[-1].step:
            raise InvalidArgumentError(f"History steps must increase: {record.step} after {self.steps[-1].step}")
        self.steps.append(record)

    def add_eval(self, record: EvalRecord) -> None:
        """Append an evaluation record."""
        self.evals.append(record)

    def losses(self) -> list[float]:
        """Get the total loss of every step, in order."""
        return [record.loss_total for record in self.steps]

    def records(self) -> Iterator[dict[str, Any]]:
        """Yield JSON-ready records, each tagged with its kind, ordered by step (evaluations after their step)."""
        evals = iter(self.evals)
        pending = next(evals, None)
        for record in self.steps:
            yield {"kind": "step", **asdict(record)}
            while pending is not None and pending.step <= record.step:
                yield {"kind": "eval", "step": pending.step, **pending.recall}
                pending = next(evals, None)
        while pending is not None:
            yield {"kind": "eval", "step": pending.step, **pending.recall}
            pending = next(evals, None)


def epoch_generator(seed: int, epoch: int) -> np.random.Generator:
    """Get the shuffle generator of an epoch (seeded with seed + epoch)."""
    return np.random.default_rng(seed + epoch)


class Trainer:
    """
    Runs the contrastive optimization loop and keeps everything needed to checkpoint it.

    Per step, in order: loss and gradients against the queues as they stand, optimizer update of the query
    encoders and temperature, momentum update of both momentum encoders, then the queue pushes.

    """

    def __init__(
        self,
        cfg: TrainConfig,
        towers: TowerPair,
        eval_set: PairDataset | None = None,
        resume: Checkpoint | None = None,
    ) -> None:
        cfg.validate()
        towers.validate()
        self.cfg = cfg
        self.towers = towers
        self.eval_set = eval_set
        self.history = TrainHistory()
        self._resume_rng: np.random.Generator | None = None
        if resume is None:
            self.state = TwoTowerState.create(
                towers,
                queue_capacity=cfg.queue_capacity,
                tau_init=cfg.tau_init,
                momentum=cfg.momentum,
            )
            self.optimizer = AdamState.zeros(trainable_params(self.state))
            self.step = 0
        else:
            self._check_resumable(resume)
            self.state = replace(resume.state, momentum=cfg.momentum)
            self.optimizer = resume.optimizer
            self.step = resume.step
            self._resume_rng = rng_from_bytes(resume.rng_state)
            LOGGER.info(f"[Trainer] Resuming from step {resume.step}")

    def _check_resumable(self, resume: Checkpoint) -> None:
        if resume.towers != self.towers:
            raise ConfigError("Checkpoint towers differ from the configured encoder_a/encoder_b")
        if resume.train.queue_capacity != self.cfg.queue_capacity:
            raise ConfigError(
                f"train.queue_capacity ({self.cfg.queue_capacity}) differs from the checkpoint ({resume.train.queue_capacity})",
            )
        ignored = {"stop_at_step", "checkpoint_path", "history_path", "data_path", "eval_every", "log_every"}
        changed = sorted(k for k, v in self.cfg.to_dict().items() if k not in ignored and resume.train.to_dict()[k] != v)
        if changed:
            LOGGER.warning(f"[Trainer] Resuming with changed settings {changed}; the trajectory will differ")

    def total_steps(self, dataset: PairDataset) -> int:
        """Get the number of steps a full run takes on a dataset."""
        return (len(dataset) // self.cfg.batch_size) * self.cfg.epochs

    def lr_at(self, step: int, total_steps: int) -> float:
        """
        Get the learning rate of a 1-based global step: base_lr at the first step, exactly 0 at the last.

        A one-step run has no distinct last step and trains its only step at base_lr.

        """
        return cosine_lr(step - 1, max(total_steps - 1, 1), self.cfg.base_lr)

    def run(self, dataset: PairDataset) -> TrainHistory:
        """
        Train until the configured epochs are done (or ``stop_at_step`` is reached).

        Args:
            dataset (PairDataset): The training split.

        Returns:
            TrainHistory: Records of the steps run by this call.

        Raises:
            EmptyDatasetError: If the dataset cannot fill a single batch.
            TrainingStepError: If a step fails, carrying its global step index.

        """
        dataset.require_nonempty("training set")
        per_epoch = len(dataset) // self.cfg.batch_size
        if per_epoch == 0:
            raise EmptyDatasetError(
                f"The training set has {len(dataset)} pairs, fewer than train.batch_size ({self.cfg.batch_size})",
            )
        total = self.total_steps(dataset)
        LOGGER.info(f"[Trainer] {len(dataset)} pairs, {per_epoch} steps per epoch, {total} steps in total")

        first_epoch, offset = divmod(self.step, per_epoch)
        for epoch in range(first_epoch, self.cfg.epochs):
            rng = epoch_generator(self.cfg.seed, epoch)
            if epoch == first_epoch and self._resume_rng is not None:
                rng = self._resume_rng
            epoch_batches = batches(dataset, self.cfg.batch_size, rng)
            start = offset if epoch == first_epoch else 0
            for batch in epoch_batches[start:]:
                self._train_step(batch, total)
                if self.cfg.stop_at_step and self.step >= self.cfg.stop_at_step:
                    LOGGER.info(f"[Trainer] Stopping at step {self.step} as requested")
                    self._resume_rng = None
                    return self.history
        self._resume_rng = None
        if self.eval_set is not None and (not self.history.evals or self.history.evals[-1].step != self.step):
            self._evaluate()
        return self.history

    def _train_step(self, batch: Sequence[ModalityPair], total: int) -> None:
        step = self.step + 1
        lr = self.lr_at(step, total)
        try:
            outputs, grads = training_step(self.state, batch)
            params, optimizer = adamw_step(
                trainable_params(self.state),
                gradients_as_params(grads),
                self.optimizer,
                lr=lr,
                betas=self.cfg.betas,
                eps=self.cfg.adam_eps,
                weight_decay=self.cfg.weight_decay,
            )
            state = with_trainable(self.state, params)
            state = replace(
                state,
                momentum_a=momentum_update(state.momentum_a, state.query_a, state.momentum),
                momentum_b=momentum_update(state.momentum_b, state.query_b, state.momentum),
                queue_a=queue_push(state.queue_a, outputs.keys_a),
                queue_b=queue_push(state.queue_b, outputs.keys_b),
            )
        except XmocoError as e:
            raise TrainingStepError(step, e) from e

        self.state, self.optimizer, self.step = state, optimizer, step
        self.history.add_step(
            StepRecord(step, lr, outputs.loss_a2b, outputs.loss_b2a, outputs.loss_total, state.tau, outputs.negatives_a),
        )
        if self.cfg.log_every and step % self.cfg.log_every == 0:
            LOGGER.info(
                f"[Trainer] step {step}/{total} lr {lr:.3e} loss {outputs.loss_total:.4f} "
                f"(a2b {outputs.loss_a2b:.4f}, b2a {outputs.loss_b2a:.4f}) tau {state.tau:.4f}",
            )
        if self.eval_set is not None and self.cfg.eval_every and step % self.cfg.eval_every == 0:
            self._evaluate()

    def _evaluate(self) -> None:
        if self.eval_set is None:
            return
        report = evaluate(self.state, self.eval_set, MetricConfig.RECALL_KS)
        recall = report.recall_json()
        self.history.add_eval(EvalRecord(self.step, recall))
        LOGGER.info(f"[Trainer] eval at step {self.step}: {recall}")

    def checkpoint(self, dataset: PairDataset) -> Checkpoint:
        """Snapshot the run; the stored generator is the one of the epoch the next step belongs to."""
        per_epoch = max(len(dataset) // self.cfg.batch_size, 1)
        epoch = self.step // per_epoch
        return Checkpoint(
            train=self.cfg,
            towers=self.towers,
            state=self.state,
            optimizer=self.optimizer,
            step=self.step,
            rng_state=rng_state_bytes(epoch_generator(self.cfg.seed, epoch)),
        )


def fit(
    dataset: PairDataset,
    cfg: TrainConfig,
    towers: TowerPair,
    eval_set: PairDataset | None = None,
    resume: Checkpoint | None = None,
) -> tuple[TwoTowerState, TrainHistory]:
    """
    Train both towers on a dataset.

    Fully deterministic given ``cfg.seed``; resuming from a checkpoint reproduces the uninterrupted run.

    Args:
        dataset (PairDataset): Training pairs.
        cfg (TrainConfig): Hyperparameters.
        towers (TowerPair): Architecture and initialization seeds.
        eval_set (PairDataset | None): Held-out pairs evaluated every ``cfg.eval_every`` steps and at the end.
        resume (Checkpoint | None): Continue from this snapshot instead of a fresh initialization.

    Returns:
        tuple[TwoTowerState, TrainHistory]: The final state and the records of the steps run.

    """
    trainer = Trainer(cfg, towers, eval_set, resume)
    history = trainer.run(dataset)
    return trainer.state, history
