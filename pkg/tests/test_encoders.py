from __future__ import annotations

import math

import numpy as np
import pytest

from xmoco.constants import Modality
from xmoco.errors import ConfigError, DegenerateEmbeddingError, ShapeError
from xmoco.model.encoders import EncoderConfig, TowerPair, embed_matrix, encode, encode_batch, init_encoder
from xmoco.model.moco import trainable_params, with_trainable


@pytest.fixture
def config() -> EncoderConfig:
    return EncoderConfig(input_dim=6, hidden_dims=(32, 24), proj_hidden=20, embed_dim=5, seed=42)


class TestInit:
    def test_layout(self, config):
        params = init_encoder(config)
        assert params.shapes() == {
            "backbone.00.bias": (32,),
            "backbone.00.weight": (32, 6),
            "backbone.01.bias": (24,),
            "backbone.01.weight": (24, 32),
            "head.00.bias": (20,),
            "head.00.weight": (20, 24),
            "head.01.bias": (5,),
            "head.01.weight": (5, 20),
        }

    def test_seeded_and_bounded(self, config):
        first, second = init_encoder(config), init_encoder(config)
        for name in first:
            assert np.array_equal(first[name], second[name])
        bound = math.sqrt(6.0 / (6 + 32))
        assert np.abs(first["backbone.00.weight"]).max() <= bound
        np.testing.assert_array_equal(first["head.01.bias"], np.zeros(5))

    def test_different_seeds_differ(self, config):
        other = EncoderConfig(input_dim=6, hidden_dims=(32, 24), proj_hidden=20, embed_dim=5, seed=43)
        assert not np.array_equal(init_encoder(config)["head.00.weight"], init_encoder(other)["head.00.weight"])

    def test_invalid_config(self):
        with pytest.raises(ConfigError, match="embed_dim"):
            init_encoder(EncoderConfig(embed_dim=0))


class TestEncode:
    def test_unit_norm(self, config):
        params = init_encoder(config)
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = encode(params, rng.standard_normal(6))
            assert z.shape == (5,)
            assert np.linalg.norm(z) == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self, config):
        params = init_encoder(config)
        x = np.linspace(-1.0, 1.0, 6)
        assert np.array_equal(encode(params, x), encode(params, x))

    def test_batch_matches_single(self, config):
        params = init_encoder(config)
        rows = np.random.default_rng(1).standard_normal((7, 6))
        batch = encode_batch(params, rows)
        assert len(batch) == 7
        for row, z in zip(rows, batch, strict=True):
            assert np.array_equal(encode(params, row), z)

    def test_permuted_batch_gives_permuted_embeddings(self, config):
        params = init_encoder(config)
        rng = np.random.default_rng(2)
        rows = rng.standard_normal((12, 6))
        order = rng.permutation(12)
        original = np.stack(encode_batch(params, rows))
        permuted = np.stack(encode_batch(params, rows[order]))
        np.testing.assert_allclose(permuted, original[order], rtol=0, atol=1e-15)

    def test_wrong_length_names_index(self, config):
        params = init_encoder(config)
        with pytest.raises(ShapeError, match="Item 1"):
            encode_batch(params, [np.ones(6), np.ones(5)])

    def test_zero_features_are_degenerate(self, config):
        params = init_encoder(config)
        with pytest.raises(DegenerateEmbeddingError) as info:
            encode_batch(params, [np.ones(6), np.zeros(6)])
        assert info.value.index == 1

    def test_empty_batch(self, config):
        assert embed_matrix(init_encoder(config), []).shape == (0, 5)


class TestTowerPair:
    def test_embed_dims_must_match(self):
        towers = TowerPair(EncoderConfig(input_dim=4, embed_dim=8), EncoderConfig(input_dim=3, embed_dim=6))
        with pytest.raises(ConfigError, match="embed_dim"):
            towers.validate()

    def test_round_trip_dict(self, config):
        assert EncoderConfig.from_dict(config.to_dict()) == config

    def test_towers_do_not_share_parameters(self, small_state, small_dataset):
        params = dict(trainable_params(small_state).items())
        params["a/head.01.weight"] = params["a/head.01.weight"] + 0.25
        params["a/backbone.00.bias"] = params["a/backbone.00.bias"] + 0.1
        changed = with_trainable(small_state, params)
        features_a, features_b = small_dataset.features(Modality.A), small_dataset.features(Modality.B)
        assert not np.array_equal(embed_matrix(changed.query_a, features_a), embed_matrix(small_state.query_a, features_a))
        assert np.array_equal(embed_matrix(changed.query_b, features_b), embed_matrix(small_state.query_b, features_b))
