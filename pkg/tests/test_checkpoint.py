import numpy as np
import pytest

from deskworld.checkpoint import (CheckpointBundle, CheckpointError,
                                  load_checkpoint, save_checkpoint)
from deskworld.rng import stream


def sample_bundle():
    rng = stream(0, "ckpt")
    return CheckpointBundle(
        step=1234,
        config={"model_dim": 8, "mode": "prepend"},
        arrays={
            "w": rng.normal(size=(4, 4)).astype(np.float32),
            "b": rng.normal(size=(4,)),
            "opt.m.w": rng.normal(size=(4, 4)),
            "count": np.array(7, dtype=np.int64),
        },
        loader_state={"seed": 1, "epoch": 2, "cursor": 30},
        rng_state={"train": [1, "loss", 5]},
        meta={"note": "unit"},
    )


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "ck.bin"
    bundle = sample_bundle()
    save_checkpoint(bundle, path)
    loaded = load_checkpoint(path)
    assert loaded.step == bundle.step
    assert loaded.config == bundle.config
    assert loaded.loader_state == bundle.loader_state
    assert loaded.rng_state == bundle.rng_state
    assert loaded.meta == bundle.meta
    assert set(loaded.arrays) == set(bundle.arrays)
    for name, arr in bundle.arrays.items():
        assert loaded.arrays[name].dtype == arr.dtype
        np.testing.assert_array_equal(loaded.arrays[name], arr)


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(sample_bundle(), a)
    save_checkpoint(sample_bundle(), b)
    assert a.read_bytes() == b.read_bytes()


def test_truncation_detected(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(sample_bundle(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_corruption_detected(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(sample_bundle(), path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_no_tmp_file_left_behind(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(sample_bundle(), path)
    assert [p.name for p in tmp_path.iterdir()] == ["ck.bin"]
