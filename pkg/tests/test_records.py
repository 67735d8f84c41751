import time

import numpy as np
import pytest

from deskworld.env import Episode, generate_episode
from deskworld.records import (Chunking, DatasetIndex, DatasetReader,
                               LoaderState, RecordFormatError, bench_read,
                               detect_duplicates, prefetch, read_manifest,
                               read_record, shuffled_batches,
                               subsequence_start, write_dataset,
                               write_manifest)
from deskworld.rng import stream


def tiny_episode(seed, length, h=8, w=8):
    rng = stream(seed, "tiny-ep")
    return Episode(seed=seed,
                   frames=rng.integers(0, 256, size=(length, h, w, 3)).astype(np.uint8),
                   actions=rng.integers(0, 7, size=length).astype(np.uint8))


@pytest.fixture
def small_dataset(tmp_path):
    eps = (tiny_episode(s, 32) for s in range(10))
    return write_dataset(eps, Chunking(frames_per_record=8, records_per_file=10), tmp_path / "ds")


def test_file_splitting_arithmetic(tmp_path):
    eps = (tiny_episode(s, 8) for s in range(250))
    idx = write_dataset(eps, Chunking(frames_per_record=8, records_per_file=100), tmp_path / "ds")
    assert [f["records"] for f in idx.files] == [100, 100, 50]
    assert idx.total_records == 250


def test_roundtrip_bit_exact(small_dataset):
    idx = small_dataset
    eps = {s: tiny_episode(s, 32) for s in range(10)}
    for i in range(idx.total_records):
        frames, actions = read_record(idx, i)
        seed = idx.record_seeds[i]
        chunk = i % 4  # 32 frames -> 4 records of 8 per episode
        exp = eps[seed]
        np.testing.assert_array_equal(frames, exp.frames[chunk * 8:(chunk + 1) * 8])
        np.testing.assert_array_equal(actions, exp.actions[chunk * 8:(chunk + 1) * 8])


def test_short_episodes_dropped(tmp_path):
    eps = [tiny_episode(0, 4), tiny_episode(1, 8)]
    idx = write_dataset(iter(eps), Chunking(8, 10), tmp_path / "ds")
    assert idx.total_records == 1
    assert idx.record_seeds == [1]


def test_random_vs_sequential_access_identical(small_dataset):
    idx = small_dataset
    reader = DatasetReader(idx)
    order = stream(1, "order").permutation(idx.total_records)
    random_reads = {int(i): reader.read_record(int(i))[0].tobytes() for i in order}
    seq_reads = {i: reader.read_record(i)[0].tobytes() for i in range(idx.total_records)}
    assert random_reads == seq_reads
    reader.close()


def test_out_of_range_and_corrupt_rejected(small_dataset, tmp_path):
    idx = small_dataset
    with pytest.raises(IndexError):
        read_record(idx, idx.total_records)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    from deskworld.records import RecordReader
    with pytest.raises(RecordFormatError):
        RecordReader(bad)


def test_loader_determinism(small_dataset):
    idx = small_dataset
    state = LoaderState(seed=5)

    def take(n):
        out = []
        it = shuffled_batches(idx, state, batch_size=4, seq_len=4)
        for _ in range(n):
            f, a, _ = next(it)
            out.append((f.tobytes(), a.tobytes()))
        return out

    assert take(12) == take(12)


def test_loader_batch_shapes(small_dataset):
    f, a, _ = next(shuffled_batches(small_dataset, LoaderState(seed=0), batch_size=3, seq_len=4))
    assert f.shape == (3, 4, 8, 8, 3)
    assert a.shape == (3, 4)


def test_loader_resume_suffix_identical(small_dataset):
    idx = small_dataset
    it = shuffled_batches(idx, LoaderState(seed=9), batch_size=4, seq_len=4)
    full = []
    mid_state = None
    for k in range(20):
        f, a, nxt = next(it)
        full.append(f.tobytes())
        if k == 7:
            mid_state = nxt
    resumed = shuffled_batches(idx, mid_state, batch_size=4, seq_len=4)
    for k in range(8, 20):
        f, a, _ = next(resumed)
        assert f.tobytes() == full[k]


def test_loader_rejects_oversized_batch(small_dataset):
    with pytest.raises(ValueError):
        next(shuffled_batches(small_dataset, LoaderState(seed=0), batch_size=10_000))


def test_subsequence_start_in_range():
    for rid in range(50):
        s = subsequence_start(3, 1, rid, 160, 16)
        assert 0 <= s <= 160 - 16


def test_prefetch_preserves_order(small_dataset):
    base = [f.tobytes() for f, _, _ in
            _take(shuffled_batches(small_dataset, LoaderState(seed=2), 2, 4), 30)]
    deep = [f.tobytes() for f, _, _ in
            _take(prefetch(shuffled_batches(small_dataset, LoaderState(seed=2), 2, 4), 8), 30)]
    assert base == deep


def test_prefetch_item_count():
    items = list(prefetch(iter(range(1000)), depth=4))
    assert items == list(range(1000))


def test_prefetch_propagates_errors():
    def boom():
        yield 1
        raise RuntimeError("decode failed")

    it = prefetch(boom(), depth=2)
    assert next(it) == 1
    with pytest.raises(RuntimeError):
        next(it)


def _take(it, n):
    return [next(it) for _ in range(n)]


def test_duplicates_all_distinct(tmp_path):
    eps = (tiny_episode(s, 8) for s in range(5))
    idx = write_dataset(eps, Chunking(8, 10), tmp_path / "ds")
    report = detect_duplicates(idx)
    assert report["duplicate_frame_fraction"] == 0.0
    assert report["duplicate_episode_count"] == 0


def test_duplicates_one_in_ten(tmp_path):
    frames = stream(0, "dupfix").integers(0, 256, size=(10, 8, 8, 3)).astype(np.uint8)
    frames[9] = frames[0]  # 1 of 10 frames is a repeated copy
    ep = Episode(seed=0, frames=frames, actions=np.zeros(10, dtype=np.uint8))
    idx = write_dataset(iter([ep]), Chunking(5, 10), tmp_path / "ds")
    report = detect_duplicates(idx)
    assert report["duplicate_frame_fraction"] == pytest.approx(0.1)


def test_split_disjointness_check(tmp_path):
    manifest = {"train": range(0, 10), "val": range(9, 12)}
    eps = (tiny_episode(s, 8) for s in range(3))
    idx = write_dataset(eps, Chunking(8, 10), tmp_path / "ds")
    report = detect_duplicates(idx, manifest=manifest)
    assert report["splits_disjoint"] is False
    assert report["overlapping_seeds"] == [9]


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "manifest.txt"
    write_manifest(path, {"train": (0, 409), "val": (410, 460), "test": (461, 511)})
    splits = read_manifest(path)
    assert list(splits["val"]) == list(range(410, 461))


def test_bench_read_reports(small_dataset):
    out = bench_read(small_dataset)
    assert out["frames"] == small_dataset.total_records * 8
    assert out["frames_per_sec"] > 0
