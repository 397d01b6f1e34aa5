from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from xmoco.constants import SplitTag
from xmoco.data.synthetic import SynthSpec, generate_synthetic
from xmoco.errors import EmptyDatasetError, InvalidArgumentError
from xmoco.training.checkpoint import checkpoint_params
from xmoco.training.trainer import EvalRecord, StepRecord, Trainer, TrainHistory, fit


def _same_params(first, second) -> bool:
    return all(np.array_equal(first[name], second[name]) for name in first) and set(first) == set(second)


class TestTrainer:
    def test_runs_every_step(self, small_dataset, small_train_config, small_towers):
        trainer = Trainer(small_train_config, small_towers)
        history = trainer.run(small_dataset)
        assert trainer.total_steps(small_dataset) == 12
        assert [r.step for r in history.steps] == list(range(1, 13))
        assert trainer.step == 12
        assert trainer.optimizer.step == 12

    def test_schedule_and_queue_fill(self, small_dataset, small_train_config, small_towers):
        trainer = Trainer(small_train_config, small_towers)
        history = trainer.run(small_dataset)
        assert history.steps[0].lr == small_train_config.base_lr
        assert history.steps[-1].lr == 0.0
        # The loss of a step only sees keys of earlier batches
        assert [r.negatives for r in history.steps[:4]] == [0, 8, 16, 16]
        assert history.steps[0].loss_total == 0.0
        assert len(trainer.state.queue_a) == 16
        assert trainer.state.queue_a.total_pushed == 12 * 8

    def test_momentum_encoders_trail_query_encoders(self, small_dataset, small_train_config, small_towers):
        trainer = Trainer(small_train_config, small_towers)
        before = trainer.state.momentum_a
        trainer.run(small_dataset)
        state = trainer.state
        assert not _same_params(state.momentum_a, before)
        assert not _same_params(state.momentum_a, state.query_a)

    def test_same_seed_is_bitwise_identical(self, small_dataset, small_train_config, small_towers):
        first, _ = fit(small_dataset, small_train_config, small_towers)
        second, _ = fit(small_dataset, small_train_config, small_towers)
        for slot in ("query_a", "query_b", "momentum_a", "momentum_b"):
            assert _same_params(getattr(first, slot), getattr(second, slot))
        assert first.log_tau == second.log_tau
        assert np.array_equal(first.queue_b.entries, second.queue_b.entries)

    def test_resume_reproduces_the_uninterrupted_run(self, small_dataset, small_train_config, small_towers):
        full = Trainer(small_train_config, small_towers)
        full_history = full.run(small_dataset)

        # Stop inside the second epoch (6 steps per epoch)
        interrupted = Trainer(replace(small_train_config, stop_at_step=8), small_towers)
        interrupted.run(small_dataset)
        assert interrupted.step == 8
        resumed = Trainer(small_train_config, small_towers, resume=interrupted.checkpoint(small_dataset))
        resumed_history = resumed.run(small_dataset)

        assert [r.step for r in resumed_history.steps] == list(range(9, 13))
        assert [r.loss_total for r in resumed_history.steps] == full_history.losses()[8:]
        resumed_params = checkpoint_params(resumed.checkpoint(small_dataset))
        assert _same_params(resumed_params, checkpoint_params(full.checkpoint(small_dataset)))

    def test_resume_at_epoch_boundary(self, small_dataset, small_train_config, small_towers):
        full = Trainer(small_train_config, small_towers)
        full.run(small_dataset)
        interrupted = Trainer(replace(small_train_config, stop_at_step=6), small_towers)
        interrupted.run(small_dataset)
        resumed = Trainer(small_train_config, small_towers, resume=interrupted.checkpoint(small_dataset))
        resumed.run(small_dataset)
        resumed_params = checkpoint_params(resumed.checkpoint(small_dataset))
        assert _same_params(resumed_params, checkpoint_params(full.checkpoint(small_dataset)))

    def test_single_step_run_trains_at_base_lr(self, small_dataset, small_train_config, small_towers):
        eight = small_dataset.subset(range(8), SplitTag.TRAIN)
        cfg = replace(small_train_config, epochs=1)
        trainer = Trainer(cfg, small_towers)
        history = trainer.run(eight)
        assert trainer.total_steps(eight) == 1
        assert [r.lr for r in history.steps] == [cfg.base_lr]

    def test_continuing_after_a_stop_matches_the_full_run(self, small_dataset, small_train_config, small_towers):
        full = Trainer(small_train_config, small_towers)
        full.run(small_dataset)
        interrupted = Trainer(replace(small_train_config, stop_at_step=4), small_towers)
        interrupted.run(small_dataset)
        # Resume, stop again inside the next epoch, then run on to the end
        resumed = Trainer(replace(small_train_config, stop_at_step=9), small_towers, resume=interrupted.checkpoint(small_dataset))
        resumed.run(small_dataset)
        assert resumed.step == 9
        resumed.cfg = small_train_config
        resumed.run(small_dataset)
        resumed_params = checkpoint_params(resumed.checkpoint(small_dataset))
        assert _same_params(resumed_params, checkpoint_params(full.checkpoint(small_dataset)))

    def test_periodic_and_final_evaluation(self, small_dataset, small_train_config, small_towers):
        eval_set = small_dataset.subset(range(10), SplitTag.TEST)
        trainer = Trainer(replace(small_train_config, eval_every=5), small_towers, eval_set=eval_set)
        history = trainer.run(small_dataset)
        assert [e.step for e in history.evals] == [5, 10, 12]
        assert set(history.evals[0].recall) == {"i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10"}

    def test_dataset_smaller_than_a_batch(self, small_dataset, small_train_config, small_towers):
        too_small = small_dataset.subset(range(5), SplitTag.TRAIN)
        with pytest.raises(EmptyDatasetError, match="batch_size"):
            Trainer(small_train_config, small_towers).run(too_small)

    def test_loss_goes_down(self, small_train_config, small_towers):
        dataset = generate_synthetic(SynthSpec(n_pairs=96, latent_dim=3, input_dim_a=6, input_dim_b=5, seed=21))
        cfg = replace(small_train_config, epochs=6, base_lr=1e-2)
        _state, history = fit(dataset, cfg, small_towers)
        losses = history.losses()
        # Queue is full from step 3 on; compare the early full-queue steps with the last epoch
        assert np.mean(losses[-6:]) < np.mean(losses[2:8])


class TestHistory:
    def test_steps_must_increase(self):
        history = TrainHistory()
        history.add_step(StepRecord(1, 0.1, 0.0, 0.0, 0.0, 0.05, 0))
        with pytest.raises(InvalidArgumentError):
            history.add_step(StepRecord(1, 0.1, 0.0, 0.0, 0.0, 0.05, 0))

    def test_records_interleave_evaluations(self):
        history = TrainHistory()
        for step in (1, 2, 3):
            history.add_step(StepRecord(step, 0.1, 1.0, 2.0, 3.0, 0.05, 4))
        history.add_eval(EvalRecord(2, {"i2t_r1": 50.0}))
        kinds = [(r["kind"], r["step"]) for r in history.records()]
        assert kinds == [("step", 1), ("step", 2), ("eval", 2), ("step", 3)]
        first = next(history.records())
        assert first == {
            "kind": "step",
            "step": 1,
            "lr": 0.1,
            "loss_a2b": 1.0,
            "loss_b2a": 2.0,
            "loss_total": 3.0,
            "tau": 0.05,
            "negatives": 4,
        }
