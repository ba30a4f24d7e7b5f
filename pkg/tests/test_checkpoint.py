import struct

import numpy as np
import pytest
import torch

from semvad.errors import ChecksumError, CheckpointError, UnsupportedVersionError
from semvad.neural import (
    checkpoint_from_model,
    classify_chunk,
    load_checkpoint,
    model_from_checkpoint,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)


@pytest.fixture
def blob(tiny_model):
    return save_checkpoint(checkpoint_from_model(tiny_model, note="unit"))


def test_round_trip_is_byte_identical(blob):
    assert save_checkpoint(load_checkpoint(blob)) == blob


def test_round_trip_preserves_decisions(tiny_model, blob, rng):
    restored = model_from_checkpoint(load_checkpoint(blob))
    frames = rng.standard_normal((256, 80)).astype(np.float32)
    a, b = classify_chunk(tiny_model, frames), classify_chunk(restored, frames)
    assert a.logits.tobytes() == b.logits.tobytes()
    assert not any(p.requires_grad for p in restored.parameters())


def test_metadata_survives(blob):
    assert load_checkpoint(blob).config["note"] == "unit"


def test_file_round_trip(tmp_path, tiny_model):
    ckpt = checkpoint_from_model(tiny_model)
    write_checkpoint(tmp_path / "m.ckpt", ckpt)
    assert read_checkpoint(tmp_path / "m.ckpt").equals(ckpt)


@pytest.mark.parametrize("where", [20, 200, -10, -1])
def test_flipped_byte_fails_checksum(blob, where):
    data = bytearray(blob)
    data[where] ^= 0x01
    with pytest.raises(CheckpointError):
        load_checkpoint(bytes(data))


def test_flipped_tensor_byte_is_a_checksum_error(blob):
    data = bytearray(blob)
    data[len(data) - 100] ^= 0x40
    with pytest.raises(ChecksumError):
        load_checkpoint(bytes(data))


def test_version_zero_rejected(blob):
    data = bytearray(blob)
    data[8:12] = struct.pack("<I", 0)
    with pytest.raises(UnsupportedVersionError) as err:
        load_checkpoint(bytes(data))
    assert err.value.offset == 8


def test_bad_magic(blob):
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(b"NOTACKPT" + blob[8:])
    assert err.value.offset == 0


@pytest.mark.parametrize("keep", [0, 5, 11, 30, 500])
def test_truncation_reports_offset(blob, keep):
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(blob[:keep])
    assert err.value.offset is not None
    assert "offset" in str(err.value)


def test_trailing_garbage_rejected(blob):
    with pytest.raises(CheckpointError):
        load_checkpoint(blob + b"\0\0\0\0")


def test_loaded_model_ignores_later_edits_to_source(tiny_model, blob, rng):
    restored = model_from_checkpoint(load_checkpoint(blob))
    frames = rng.standard_normal((64, 80)).astype(np.float32)
    before = classify_chunk(restored, frames).logits.tobytes()
    with torch.no_grad():
        tiny_model.head.bias.add_(1.0)
    assert classify_chunk(restored, frames).logits.tobytes() == before
