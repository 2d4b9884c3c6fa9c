"""Deterministic seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` built from
a 64-bit seed derived from a master seed and a string key, so results never
depend on execution order or the number of worker processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _key_hash(key: str) -> int:
    # Python's hash() is salted per process; blake2b is stable.
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master_seed: int, key: str) -> int:
    """Mix ``master_seed`` with ``key`` into an independent 64-bit seed."""
    return splitmix64((int(master_seed) & _MASK64) ^ _key_hash(key))


def derive_rng(master_seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, key))
