from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from xmoco.constants import CorrelationMode
from xmoco.data.pairs import ModalityPair, PairDataset
from xmoco.data.synthetic import SynthSpec, generate_synthetic
from xmoco.model.encoders import EncoderConfig, TowerPair
from xmoco.model.moco import TwoTowerState
from xmoco.training.config import TrainConfig


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of a scalar function of an array."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        bumped = x.copy()
        bumped[i] += h
        upper = fn(bumped)
        bumped[i] -= 2 * h
        lower = fn(bumped)
        grad[i] = (upper - lower) / (2 * h)
    return grad


@pytest.fixture
def small_towers() -> TowerPair:
    return TowerPair(
        EncoderConfig(input_dim=6, hidden_dims=(32,), proj_hidden=32, embed_dim=4, seed=3),
        EncoderConfig(input_dim=5, hidden_dims=(32,), proj_hidden=32, embed_dim=4, seed=4),
    )


@pytest.fixture
def small_state(small_towers: TowerPair) -> TwoTowerState:
    return TwoTowerState.create(small_towers, queue_capacity=16, tau_init=0.1, momentum=0.9)


@pytest.fixture
def small_dataset() -> PairDataset:
    spec = SynthSpec(n_pairs=48, latent_dim=3, input_dim_a=6, input_dim_b=5, noise_sigma=0.05, seed=11)
    return generate_synthetic(spec)


@pytest.fixture
def small_train_config(tmp_path: Path) -> TrainConfig:
    return TrainConfig(
        batch_size=8,
        epochs=2,
        base_lr=5e-3,
        queue_capacity=16,
        tau_init=0.1,
        momentum=0.9,
        eval_every=0,
        log_every=0,
        seed=5,
        data_path=str(tmp_path / "pairs.jsonl"),
        checkpoint_path=str(tmp_path / "run.xmco"),
        history_path=str(tmp_path / "history.jsonl"),
    )


@pytest.fixture
def tiny_pairs() -> PairDataset:
    return PairDataset(
        (
            ModalityPair("p0", np.array([1.0, 0.0, 0.5]), np.array([0.2, 1.0])),
            ModalityPair("p1", np.array([0.0, 1.0, -0.5]), np.array([1.0, -0.3])),
            ModalityPair("p2", np.array([0.3, 0.3, 1.0]), np.array([-0.7, 0.4])),
        ),
    )


@pytest.fixture
def weak_spec() -> SynthSpec:
    return SynthSpec(n_pairs=64, latent_dim=4, input_dim_a=10, input_dim_b=8, correlation_mode=CorrelationMode.WEAK, seed=2)
