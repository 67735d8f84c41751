"""Binary random-access record store and deterministic data loader.

One record = `frames_per_record` raw uint8 RGB frames plus one u8 action id
per frame.  Files carry a fixed-size header and an absolute u64 offset table,
so any record is reachable with O(1) seeks and no scanning.

Layout (little-endian):

    bytes 0..8    magic  b"JASREC\\x01\\x00"
    u32           version (1)
    u32           record count in this file
    u32           frames_per_record
    u16 x 3       frame geometry (height, width, channels)
    u64 x count   absolute payload offset per record
    payload       frames bytes + action bytes per record, concatenated
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import struct
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .env import Episode
from .rng import fold_key, stream

MAGIC = b"JASREC\x01\x00"
VERSION = 1
_HEADER = struct.Struct("<4x4xIII3H")  # placeholder; magic handled separately
_FIXED = struct.Struct("<IIIHHH")      # version, count, fpr, h, w, c


class RecordFormatError(Exception):
    """Corrupt or incompatible record file."""


@dataclass(frozen=True)
class Chunking:
    frames_per_record: int = 160
    records_per_file: int = 100


@dataclass(frozen=True)
class LoaderState:
    seed: int
    epoch: int = 0
    cursor: int = 0           # position within the epoch's permutation, in records
    prefetch_depth: int = 1


@dataclass
class DatasetIndex:
    root: Path
    files: list              # [{"name": str, "records": int}]
    frames_per_record: int
    records_per_file: int
    geometry: tuple          # (h, w, c)
    record_seeds: list       # episode seed per record, aligned with global ids

    @property
    def total_records(self) -> int:
        return sum(f["records"] for f in self.files)

    def save(self) -> None:
        payload = {
            "files": self.files,
            "frames_per_record": self.frames_per_record,
            "records_per_file": self.records_per_file,
            "geometry": list(self.geometry),
            "record_seeds": self.record_seeds,
        }
        (self.root / "index.json").write_text(json.dumps(payload))

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        root = Path(root)
        payload = json.loads((root / "index.json").read_text())
        return cls(root=root, files=payload["files"],
                   frames_per_record=payload["frames_per_record"],
                   records_per_file=payload["records_per_file"],
                   geometry=tuple(payload["geometry"]),
                   record_seeds=payload["record_seeds"])


def _record_nbytes(fpr: int, geometry) -> int:
    h, w, c = geometry
    return fpr * h * w * c + fpr


def _write_file(path: Path, records: list, fpr: int, geometry) -> None:
    h, w, c = geometry
    count = len(records)
    header = MAGIC + _FIXED.pack(VERSION, count, fpr, h, w, c)
    offset0 = len(header) + 8 * count
    rec_nbytes = _record_nbytes(fpr, geometry)
    offsets = [offset0 + i * rec_nbytes for i in range(count)]
    tmp = path.with_suffix(".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(struct.pack(f"<{count}Q", *offsets))
            for frames, actions in records:
                fh.write(frames.tobytes())
                fh.write(actions.tobytes())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_dataset(episodes: Iterator[Episode], chunking: Chunking, out_dir) -> DatasetIndex:
    """Chunk episodes into fixed-size records and persist them with an index.

    Episodes shorter than frames_per_record are dropped; longer ones are split
    into as many full records as fit (the ragged tail is dropped).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fpr = chunking.frames_per_record
    rpf = chunking.records_per_file
    pending: list = []
    files: list = []
    record_seeds: list = []
    geometry = None

    def flush():
        nonlocal pending
        if not pending:
            return
        name = f"records-{len(files):05d}.bin"
        _write_file(out / name, pending, fpr, geometry)
        files.append({"name": name, "records": len(pending)})
        pending = []

    try:
        for ep in episodes:
            if geometry is None:
                geometry = ep.frames.shape[1:]
            n_full = len(ep.frames) // fpr
            for k in range(n_full):
                frames = np.ascontiguousarray(ep.frames[k * fpr:(k + 1) * fpr])
                actions = np.ascontiguousarray(ep.actions[k * fpr:(k + 1) * fpr], dtype=np.uint8)
                pending.append((frames, actions))
                record_seeds.append(int(ep.seed))
                if len(pending) == rpf:
                    flush()
        flush()
    except BaseException:
        # partial-file cleanup: the tmp-then-rename writer never leaves a
        # half-written .bin, but drop any orphan tmp files
        for p in out.glob("*.tmp"):
            p.unlink(missing_ok=True)
        raise
    if geometry is None:
        raise ValueError("no episodes long enough to produce a record")
    index = DatasetIndex(root=out, files=files, frames_per_record=fpr,
                         records_per_file=rpf, geometry=tuple(int(g) for g in geometry),
                         record_seeds=record_seeds)
    index.save()
    return index


def _open_and_check(path: Path):
    fh = open(path, "rb")
    head = fh.read(len(MAGIC) + _FIXED.size)
    if len(head) < len(MAGIC) + _FIXED.size or head[:len(MAGIC)] != MAGIC:
        fh.close()
        raise RecordFormatError(f"{path}: bad magic")
    version, count, fpr, h, w, c = _FIXED.unpack(head[len(MAGIC):])
    if version != VERSION:
        fh.close()
        raise RecordFormatError(f"{path}: unsupported version {version}")
    return fh, count, fpr, (h, w, c)


class RecordReader:
    """Reader for one record file; O(1) seek per record."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh, self.count, self.frames_per_record, self.geometry = _open_and_check(self.path)
        self._table_offset = len(MAGIC) + _FIXED.size
        self._rec_nbytes = _record_nbytes(self.frames_per_record, self.geometry)

    def read(self, i: int):
        if not 0 <= i < self.count:
            raise IndexError(f"record {i} outside [0, {self.count})")
        self._fh.seek(self._table_offset + 8 * i)
        (offset,) = struct.unpack("<Q", self._fh.read(8))
        self._fh.seek(offset)
        blob = self._fh.read(self._rec_nbytes)
        if len(blob) != self._rec_nbytes:
            raise RecordFormatError(f"{self.path}: truncated record {i}")
        h, w, c = self.geometry
        nfb = self.frames_per_record * h * w * c
        frames = np.frombuffer(blob[:nfb], dtype=np.uint8).reshape(self.frames_per_record, h, w, c)
        actions = np.frombuffer(blob[nfb:], dtype=np.uint8)
        return frames, actions

    def close(self):
        self._fh.close()


class DatasetReader:
    """Random access across all files of a DatasetIndex."""

    def __init__(self, index: DatasetIndex):
        self.index = index
        self._readers: dict = {}
        self._bounds = []
        start = 0
        for fid, f in enumerate(index.files):
            self._bounds.append((start, start + f["records"], fid))
            start += f["records"]
        self.total = start

    def _reader(self, fid: int) -> RecordReader:
        if fid not in self._readers:
            self._readers[fid] = RecordReader(self.index.root / self.index.files[fid]["name"])
        return self._readers[fid]

    def read_record(self, i: int):
        if not 0 <= i < self.total:
            raise IndexError(f"record {i} outside [0, {self.total})")
        for lo, hi, fid in self._bounds:
            if lo <= i < hi:
                return self._reader(fid).read(i - lo)
        raise AssertionError("unreachable")

    def close(self):
        for r in self._readers.values():
            r.close()
        self._readers.clear()


def read_record(index: DatasetIndex, i: int):
    reader = DatasetReader(index)
    try:
        return reader.read_record(i)
    finally:
        reader.close()


def subsequence_start(seed: int, epoch: int, record_id: int, fpr: int, seq_len: int) -> int:
    """Deterministic per-(seed, epoch, record) start offset within a record."""
    span = fpr - seq_len + 1
    return fold_key(seed, "subseq", epoch, record_id) % span


def shuffled_batches(index: DatasetIndex, state: LoaderState, batch_size: int,
                     seq_len: int = 16):
    """Endless deterministic batch stream with checkpointable state.

    Each yielded item is (frames, actions, next_state): frames is a
    (B, seq_len, H, W, C) uint8 array, actions (B, seq_len) uint8, and
    next_state resumes the stream exactly after this batch.
    """
    if seq_len > index.frames_per_record:
        raise ValueError("seq_len exceeds frames_per_record")
    total = index.total_records
    if batch_size > total:
        raise ValueError(f"batch_size {batch_size} > total records {total}")
    reader = DatasetReader(index)
    epoch, cursor = state.epoch, state.cursor
    while True:
        perm = stream(state.seed, "perm", epoch).permutation(total)
        while cursor + batch_size <= total:
            ids = perm[cursor:cursor + batch_size]
            frames = np.empty((batch_size, seq_len) + tuple(index.geometry), dtype=np.uint8)
            actions = np.empty((batch_size, seq_len), dtype=np.uint8)
            for j, rid in enumerate(ids):
                f, a = reader.read_record(int(rid))
                start = subsequence_start(state.seed, epoch, int(rid),
                                          index.frames_per_record, seq_len)
                frames[j] = f[start:start + seq_len]
                actions[j] = a[start:start + seq_len]
            cursor += batch_size
            nxt = replace(state, epoch=epoch, cursor=cursor)
            if cursor + batch_size > total:
                nxt = replace(state, epoch=epoch + 1, cursor=0)
            yield frames, actions, nxt
        epoch += 1
        cursor = 0


def prefetch(iterator, depth: int):
    """Run `iterator` in a background thread with a bounded queue.

    Yields the exact same item sequence; worker exceptions re-raise at the
    consumer instead of being dropped.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    q: queue.Queue = queue.Queue(maxsize=depth)
    _DONE = object()

    def worker():
        try:
            for item in iterator:
                q.put(item)
            q.put(_DONE)
        except BaseException as exc:  # surfaced to the consumer
            q.put(exc)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is _DONE:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


def _frame_digest(frame: np.ndarray) -> bytes:
    return hashlib.blake2b(frame.tobytes(), digest_size=16).digest()


def detect_duplicates(index: DatasetIndex, manifest: dict | None = None) -> dict:
    """Exact duplicate detection by 128-bit content hash, byte-confirmed.

    Returns counts at record ("episode chunk") and frame granularity; if a
    split manifest (name -> iterable of seeds) is given, also checks split
    disjointness and reports any seed present in more than one split.
    """
    reader = DatasetReader(index)
    frame_seen: dict = {}
    record_seen: dict = {}
    dup_frames = 0
    dup_records = 0
    total_frames = 0
    for rid in range(index.total_records):
        frames, actions = reader.read_record(rid)
        rec_digest = hashlib.blake2b(frames.tobytes() + actions.tobytes(), digest_size=16).digest()
        if rec_digest in record_seen:
            prev = record_seen[rec_digest]
            pf, pa = reader.read_record(prev)
            if pf.tobytes() == frames.tobytes() and pa.tobytes() == actions.tobytes():
                dup_records += 1
        else:
            record_seen[rec_digest] = rid
        for fi in range(frames.shape[0]):
            total_frames += 1
            digest = _frame_digest(frames[fi])
            if digest in frame_seen:
                prid, pfi = frame_seen[digest]
                pf, _ = reader.read_record(prid)
                if pf[pfi].tobytes() == frames[fi].tobytes():
                    dup_frames += 1
            else:
                frame_seen[digest] = (rid, fi)
    reader.close()
    report = {
        "duplicate_episode_count": dup_records,
        "duplicate_frame_fraction": dup_frames / total_frames if total_frames else 0.0,
        "total_frames": total_frames,
        "total_records": index.total_records,
    }
    if manifest is not None:
        offenders = []
        splits = {name: set(seeds) for name, seeds in manifest.items()}
        names = sorted(splits)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                offenders.extend(sorted(splits[a] & splits[b]))
        report["splits_disjoint"] = not offenders
        report["overlapping_seeds"] = offenders
    return report


def write_manifest(path, splits: dict) -> None:
    """Write a split manifest: one `name start_seed end_seed` line per split."""
    lines = [f"{name} {lo} {hi}" for name, (lo, hi) in splits.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    """Read a manifest into {name: range(start, end+1)}."""
    splits = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        name, lo, hi = line.split()
        splits[name] = range(int(lo), int(hi) + 1)
    return splits


def bench_read(index: DatasetIndex, passes: int = 1) -> dict:
    """Sequential read throughput in frames/sec (read + decode into arrays)."""
    reader = DatasetReader(index)
    n_frames = 0
    start = time.perf_counter()
    for _ in range(passes):
        for rid in range(index.total_records):
            frames, _ = reader.read_record(rid)
            n_frames += frames.shape[0]
    elapsed = time.perf_counter() - start
    reader.close()
    return {"frames": n_frames, "seconds": elapsed,
            "frames_per_sec": n_frames / elapsed if elapsed > 0 else float("inf")}
