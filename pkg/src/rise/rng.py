"""Keyed random streams.

Every logical sample draws from its own generator derived from the run seed
and a tuple of keys, so results never depend on call or completion order.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return struct.unpack("<Q", digest)[0]


def stream(seed: int, *keys) -> np.random.Generator:
    """Return a generator that is a pure function of ``(seed, *keys)``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def hashed_uniform(seed: int, *parts) -> float:
    """Deterministic uniform in [0, 1) from a hash of its arguments.

    Used where a decision must be identical for identical inputs (greedy
    judging) rather than drawn from a stream.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode("utf-8", "surrogatepass"))
    return struct.unpack("<Q", h.digest())[0] / 2.0**64
