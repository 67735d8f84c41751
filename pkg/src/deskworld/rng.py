"""Deterministic random number streams.

All randomness in the codebase flows through counter-based Philox generators
(Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").  Streams are
derived statelessly from integer key tuples, so any point in training can be
reconstructed from (seed, purpose, step) without serializing generator state.
Key folding uses splitmix64, which is well-mixed for sequential keys.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step: a 64-bit finalizer with good avalanche behavior."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fold_key(*parts) -> int:
    """Fold a tuple of ints/strings into a single 64-bit key."""
    acc = 0x243F6A8885A308D3  # arbitrary non-zero start
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode("utf-8"):
                acc = splitmix64(acc ^ byte)
        else:
            acc = splitmix64(acc ^ (int(part) & _MASK64))
    return acc


def stream(*parts) -> np.random.Generator:
    """A fresh Philox generator keyed by the given parts.

    Distinct key tuples give statistically independent streams; identical
    tuples give bit-identical streams on every platform.
    """
    return np.random.Generator(np.random.Philox(key=fold_key(*parts)))
