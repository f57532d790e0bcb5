"""Keyed random sub-streams.

Every source of randomness in the package is a ``numpy`` generator built from
``SeedSequence(seed, spawn_key=key)``.  Keys are tuples of small non-negative
integers, so a stream is a pure function of (seed, key) and two consumers never
share state.  Signed coordinates are folded with :func:`zigzag`.
"""
from __future__ import annotations

import numpy as np

# role tags (first component of every key)
ROLE_ENV = 1
ROLE_WALK = 2
ROLE_CLOCK = 3
ROLE_REPLICA = 4
ROLE_AUX = 5

MASK64 = (1 << 64) - 1


def zigzag(x: int) -> int:
    """Map Z -> N bijectively (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...)."""
    x = int(x)
    return 2 * x if x >= 0 else -2 * x - 1


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed derived from (seed, key); used to hand replicas their own master."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replica_seed(master: int, i: int) -> int:
    return derive_seed(master, ROLE_REPLICA, i)
