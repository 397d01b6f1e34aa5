from __future__ import annotations

import json

import numpy as np
import pytest

from xmoco.constants import CorrelationMode, Modality, SplitTag
from xmoco.data.pairs import ModalityPair, PairDataset, batches, load_pairs, split, write_pairs
from xmoco.data.synthetic import SynthSpec, generate_synthetic
from xmoco.errors import ConfigError, DatasetFormatError, EmptyDatasetError, InvalidArgumentError, ShapeError


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestSynthetic:
    def test_same_seed_is_bitwise_identical(self):
        spec = SynthSpec(n_pairs=20, latent_dim=3, input_dim_a=5, input_dim_b=4, seed=9)
        first, second = generate_synthetic(spec), generate_synthetic(spec)
        assert first.ids == second.ids
        assert np.array_equal(first.features(Modality.A), second.features(Modality.A))
        assert np.array_equal(first.features(Modality.B), second.features(Modality.B))

    def test_noiseless_strong_mode_shares_the_latent(self):
        spec = SynthSpec(n_pairs=40, latent_dim=3, input_dim_a=7, input_dim_b=6, noise_sigma=0.0, seed=1)
        dataset = generate_synthetic(spec)
        joint = np.hstack([dataset.features(Modality.A), dataset.features(Modality.B)])
        assert np.linalg.matrix_rank(joint) == 3
        assert np.linalg.matrix_rank(dataset.features(Modality.A)) == 3

    def test_weak_mode_breaks_exact_alignment(self, weak_spec):
        noiseless = SynthSpec(**{**weak_spec.to_dict(), "noise_sigma": 0.0})
        dataset = generate_synthetic(noiseless)
        joint = np.hstack([dataset.features(Modality.A), dataset.features(Modality.B)])
        assert noiseless.correlation_mode is CorrelationMode.WEAK
        assert np.linalg.matrix_rank(joint) == 2 * noiseless.latent_dim

    def test_shape_and_ids(self):
        dataset = generate_synthetic(SynthSpec(n_pairs=3, latent_dim=2, input_dim_a=4, input_dim_b=3))
        assert dataset.ids == ["pair-000000", "pair-000001", "pair-000002"]
        assert (dataset.dim_a, dataset.dim_b) == (4, 3)

    def test_invalid_spec(self):
        with pytest.raises(ConfigError, match="input_dim_a"):
            generate_synthetic(SynthSpec(input_dim_a=0))


class TestPairFile:
    def test_write_then_load(self, tmp_path, tiny_pairs):
        path = tmp_path / "pairs.jsonl"
        assert write_pairs(tiny_pairs, path) == 3
        loaded = load_pairs(path)
        assert loaded.ids == tiny_pairs.ids
        assert all(a == b for a, b in zip(loaded, tiny_pairs, strict=True))
        first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        assert list(first) == ["id", "feat_a", "feat_b"]

    def test_one_line(self, tmp_path):
        path = _write_lines(tmp_path / "one.jsonl", [{"id": "x", "feat_a": [1, 2], "feat_b": [3]}])
        dataset = load_pairs(path)
        assert len(dataset) == 1
        assert dataset.get("x") is not None

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n", encoding="utf-8")
        with pytest.raises(EmptyDatasetError):
            load_pairs(path)

    def test_length_mismatch_names_line_and_dim(self, tmp_path):
        path = _write_lines(
            tmp_path / "bad.jsonl",
            [{"id": "x", "feat_a": [1, 2], "feat_b": [3]}, {"id": "y", "feat_a": [1, 2, 3], "feat_b": [3]}],
        )
        with pytest.raises(DatasetFormatError, match=r":2: feat_a has length 3, expected dim 2"):
            load_pairs(path)

    @pytest.mark.parametrize(
        ("record", "message"),
        [
            ({"feat_a": [1], "feat_b": [1]}, "'id'"),
            ({"id": "x", "feat_a": [], "feat_b": [1]}, "feat_a"),
            ({"id": "x", "feat_a": ["a"], "feat_b": [1]}, "non-number"),
            ({"id": "x", "feat_a": [True], "feat_b": [1]}, "non-number"),
        ],
    )
    def test_malformed_records(self, tmp_path, record, message):
        path = _write_lines(tmp_path / "bad.jsonl", [record])
        with pytest.raises(DatasetFormatError, match=message):
            load_pairs(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x",\n', encoding="utf-8")
        with pytest.raises(DatasetFormatError, match=":1:"):
            load_pairs(path)

    def test_duplicate_id(self, tmp_path):
        record = {"id": "x", "feat_a": [1], "feat_b": [1]}
        with pytest.raises(DatasetFormatError, match="duplicate id"):
            load_pairs(_write_lines(tmp_path / "dup.jsonl", [record, record]))


class TestDataset:
    def test_duplicate_ids_rejected(self):
        pair = ModalityPair("x", np.ones(2), np.ones(2))
        with pytest.raises(DatasetFormatError):
            PairDataset((pair, pair))

    def test_inconsistent_dims_rejected(self):
        with pytest.raises(ShapeError):
            PairDataset((ModalityPair("x", np.ones(2), np.ones(2)), ModalityPair("y", np.ones(3), np.ones(2))))


class TestSplit:
    def test_everything_in_train(self, small_dataset):
        train, val, test = split(small_dataset, (1.0, 0.0, 0.0), seed=0)
        assert (len(train), len(val), len(test)) == (48, 0, 0)
        assert train.split is SplitTag.TRAIN

    def test_disjoint_and_exhaustive(self, small_dataset):
        parts = split(small_dataset, (0.5, 0.25, 0.25), seed=3)
        ids = [pair_id for part in parts for pair_id in part.ids]
        assert sorted(ids) == sorted(small_dataset.ids)
        assert [len(p) for p in parts] == [24, 12, 12]

    def test_same_seed_same_split(self, small_dataset):
        first = split(small_dataset, (2 / 3, 0.0, 1 / 3), seed=4)
        second = split(small_dataset, (2 / 3, 0.0, 1 / 3), seed=4)
        assert [p.ids for p in first] == [p.ids for p in second]

    def test_bad_fractions(self, small_dataset):
        with pytest.raises(InvalidArgumentError):
            split(small_dataset, (0.5, 0.5, 0.5), seed=0)

    def test_required_split_must_be_nonempty(self, small_dataset):
        with pytest.raises(EmptyDatasetError):
            split(small_dataset, (0.0, 0.0, 1.0), seed=0)


class TestBatches:
    def test_partial_batch_dropped(self, small_dataset):
        ten = small_dataset.subset(range(10), SplitTag.TRAIN)
        result = batches(ten, 3, epoch_seed=0)
        assert [len(b) for b in result] == [3, 3, 3]
        assert len({pair.id for b in result for pair in b}) == 9

    def test_full_batch_follows_seeded_permutation(self, small_dataset):
        ten = small_dataset.subset(range(10), SplitTag.TRAIN)
        (only,) = batches(ten, 10, epoch_seed=7)
        order = np.random.default_rng(7).permutation(10)
        assert [pair.id for pair in only] == [ten[int(i)].id for i in order]

    def test_epoch_seeds_change_the_order(self, small_dataset):
        ten = small_dataset.subset(range(10), SplitTag.TRAIN)
        orders = {tuple(p.id for b in batches(ten, 10, epoch_seed=s) for p in b) for s in range(5)}
        assert len(orders) == 5

    def test_generator_and_seed_agree(self, small_dataset):
        by_seed = batches(small_dataset, 8, epoch_seed=12)
        by_generator = batches(small_dataset, 8, epoch_seed=np.random.default_rng(12))
        assert [[p.id for p in b] for b in by_seed] == [[p.id for p in b] for b in by_generator]

    def test_invalid_batch_size(self, small_dataset):
        with pytest.raises(InvalidArgumentError):
            batches(small_dataset, 0, epoch_seed=0)
