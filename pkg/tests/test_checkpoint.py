from __future__ import annotations

import os
import struct
import zlib
from dataclasses import replace

import numpy as np
import pytest

from xmoco.errors import CheckpointFormatError, ConfigError
from xmoco.model.moco import LOG_TAU
from xmoco.training.checkpoint import (
    checkpoint_params,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    rng_from_bytes,
    rng_state_bytes,
    save_checkpoint,
)
from xmoco.training.trainer import Trainer


@pytest.fixture
def trained(small_dataset, small_train_config, small_towers):
    trainer = Trainer(replace(small_train_config, stop_at_step=7), small_towers)
    trainer.run(small_dataset)
    return trainer.checkpoint(small_dataset)


def _with_valid_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class TestRoundTrip:
    def test_save_then_load_is_bitwise(self, tmp_path, trained):
        path = save_checkpoint(tmp_path / "ckpt.xmco", trained)
        loaded = load_checkpoint(path)
        before, after = checkpoint_params(trained), checkpoint_params(loaded)
        assert set(before) == set(after)
        for name in before:
            assert np.array_equal(before[name], after[name]), name
        assert np.array_equal(loaded.state.queue_a.entries, trained.state.queue_a.entries)
        assert loaded.state.queue_b.total_pushed == trained.state.queue_b.total_pushed
        assert loaded.state.log_tau == trained.state.log_tau
        assert (loaded.step, loaded.optimizer.step) == (7, 7)
        assert loaded.train == trained.train
        assert loaded.towers == trained.towers
        assert loaded.rng_state == trained.rng_state

    def test_fresh_state_round_trip_keeps_scalars_scalar(self, tmp_path, small_dataset, small_train_config, small_towers):
        fresh = Trainer(small_train_config, small_towers).checkpoint(small_dataset)
        loaded = load_checkpoint(save_checkpoint(tmp_path / "fresh.xmco", fresh))
        assert (loaded.step, loaded.optimizer.step) == (0, 0)
        assert loaded.state.log_tau == fresh.state.log_tau
        assert loaded.state.queue_a.entries.shape == (0, 4)
        assert loaded.optimizer.first[LOG_TAU].shape == ()
        for name, array in checkpoint_params(fresh).items():
            assert np.array_equal(checkpoint_params(loaded)[name], array), name

    def test_scalars_are_written_with_rank_zero(self, trained):
        data = encode_checkpoint(trained)
        for name in (b"log_tau", b"optim/step", b"queue_a.total_pushed"):
            start = data.index(struct.pack("<I", len(name)) + name) + 4 + len(name)
            assert struct.unpack("<I", data[start : start + 4])[0] == 0, name

    def test_encoding_is_deterministic(self, trained):
        assert encode_checkpoint(trained) == encode_checkpoint(trained)

    def test_layout_header(self, trained):
        data = encode_checkpoint(trained)
        assert data[:4] == b"XMCO"
        assert struct.unpack("<I", data[4:8])[0] == 1
        assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4]) & 0xFFFFFFFF

    def test_no_temporary_file_left(self, tmp_path, trained):
        save_checkpoint(tmp_path / "ckpt.xmco", trained)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt.xmco"]

    def test_folder_resolves_to_newest(self, tmp_path, trained):
        old = save_checkpoint(tmp_path / "old.xmco", trained)
        new = save_checkpoint(tmp_path / "new.xmco", replace(trained, step=9))
        os.utime(old, (1_000_000, 1_000_000))
        os.utime(new, (2_000_000, 2_000_000))
        assert load_checkpoint(tmp_path).step == 9

    def test_empty_folder(self, tmp_path):
        with pytest.raises(CheckpointFormatError, match="No .xmco checkpoint"):
            load_checkpoint(tmp_path)

    def test_rng_state_round_trip(self):
        rng = np.random.default_rng(17)
        rng.permutation(10)
        restored = rng_from_bytes(rng_state_bytes(rng))
        assert np.array_equal(restored.permutation(50), rng.permutation(50))


class TestCorruption:
    def test_bad_magic(self, trained):
        data = bytearray(encode_checkpoint(trained))
        data[0:4] = b"NOPE"
        with pytest.raises(CheckpointFormatError, match="bad magic"):
            decode_checkpoint(bytes(data))

    def test_unsupported_version(self, trained):
        data = bytearray(encode_checkpoint(trained))
        data[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointFormatError, match="version 99"):
            decode_checkpoint(bytes(data))

    @pytest.mark.parametrize("keep", [0, 3, 10, 100, -5, -1])
    def test_truncation(self, trained, keep):
        data = encode_checkpoint(trained)
        with pytest.raises(CheckpointFormatError, match="truncated|bad magic"):
            decode_checkpoint(data[:keep])

    def test_flipped_value_byte_fails_checksum(self, trained):
        data = bytearray(encode_checkpoint(trained))
        # Name, u32 rank 0, then the eight bytes of the scalar
        name = b"optim/second/log_tau"
        value_at = data.rfind(name) + len(name) + 4
        data[value_at + 3] ^= 0x01
        with pytest.raises(CheckpointFormatError, match="checksum mismatch"):
            decode_checkpoint(bytes(data))

    def test_trailing_bytes(self, trained):
        data = encode_checkpoint(trained) + b"\x00"
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(data)

    def test_inconsistent_contents(self, trained):
        data = encode_checkpoint(trained)
        body = data[:-4]
        # A config blob that parses but names an unknown train key
        length = struct.unpack("<I", body[8:12])[0]
        blob = body[12 : 12 + length].replace(b'"adam_eps"', b'"adam_ep5"')
        forged = _with_valid_crc(body[:8] + struct.pack("<I", len(blob)) + blob + body[12 + length :])
        with pytest.raises(CheckpointFormatError, match="inconsistent checkpoint contents"):
            decode_checkpoint(forged)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.xmco")


class TestResumeChecks:
    def test_different_towers_are_rejected(self, trained, small_train_config, small_towers):
        other = replace(small_towers, a=replace(small_towers.a, proj_hidden=9))
        with pytest.raises(ConfigError, match="towers"):
            Trainer(small_train_config, other, resume=trained)

    def test_different_queue_capacity_is_rejected(self, trained, small_train_config, small_towers):
        with pytest.raises(ConfigError, match="queue_capacity"):
            Trainer(replace(small_train_config, queue_capacity=32), small_towers, resume=trained)

    def test_changed_settings_warn(self, trained, small_train_config, small_towers, caplog):
        Trainer(replace(small_train_config, base_lr=1e-4), small_towers, resume=trained)
        assert "base_lr" in caplog.text
