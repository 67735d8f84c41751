"""Checkpoint bundles with bitwise-exact round trips.

A bundle is a single file: magic, a JSON meta block (array manifest, config,
step, loader and rng records), the concatenated raw array bytes, and a
sha256 trailer.  Writes are atomic (temp file + rename), so a reader never
sees a half-written checkpoint; truncation or tampering is detected by the
digest before anything is deserialized.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"JASCKPT1"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, truncated, or version-incompatible checkpoint."""


@dataclass
class CheckpointBundle:
    step: int
    config: dict
    arrays: dict            # name -> ndarray (params, optimizer moments)
    loader_state: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def save_checkpoint(bundle: CheckpointBundle, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    blobs = []
    for name in sorted(bundle.arrays):
        arr = np.ascontiguousarray(bundle.arrays[name])
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    meta = {
        "version": bundle.version,
        "step": bundle.step,
        "config": bundle.config,
        "loader_state": bundle.loader_state,
        "rng_state": bundle.rng_state,
        "meta": bundle.meta,
        "manifest": manifest,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(meta_bytes)) + meta_bytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body + digest)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: digest mismatch (truncated or corrupt)")
    (meta_len,) = struct.unpack("<Q", body[len(MAGIC):len(MAGIC) + 8])
    meta_start = len(MAGIC) + 8
    meta = json.loads(body[meta_start:meta_start + meta_len].decode("utf-8"))
    if meta["version"] != VERSION:
        raise CheckpointError(f"{path}: version {meta['version']} not supported")
    arrays = {}
    cursor = meta_start + meta_len
    for entry in meta["manifest"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        arrays[entry["name"]] = np.frombuffer(
            body[cursor:cursor + nbytes], dtype=dtype).reshape(entry["shape"]).copy()
        cursor += nbytes
    return CheckpointBundle(step=meta["step"], config=meta["config"], arrays=arrays,
                            loader_state=meta["loader_state"], rng_state=meta["rng_state"],
                            meta=meta["meta"], version=meta["version"])
