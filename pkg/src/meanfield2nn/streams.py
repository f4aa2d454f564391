"""Counter-based random streams.

All randomness in the package flows through Philox generators keyed by a
master seed plus a path of labels, so any component can re-derive its
stream independently of execution order.  Paths mix strings (hashed with
crc32, stable across runs and platforms) and integers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode(part) -> list[int]:
    if isinstance(part, str):
        return [zlib.crc32(part.encode("utf-8"))]
    if isinstance(part, (int, np.integer)):
        v = int(part)
        if v < 0:
            v = -2 * v + 1
        limbs = []
        while True:
            limbs.append(v & 0xFFFFFFFF)
            v >>= 32
            if not v:
                return limbs
    raise TypeError(f"stream path parts must be str or int, got {type(part)!r}")


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator keyed by (seed, path)."""
    key = [limb for part in path for limb in _encode(part)]
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))
