"""Seed derivation shared by every simulation stream.

A run owns one master seed. Each consumer asks for a generator keyed by
``(master, repetition, stream)`` so changing one repetition or one stream
never perturbs the others.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("pool", "traffic", "logs", "forest")


def stream_key(name: str) -> int:
    # crc32 keeps keys stable across interpreter runs (hash() is salted)
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(master: int, *keys: int | str) -> int:
    """Fold ``keys`` into ``master`` and return a 63-bit integer seed."""
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(stream_key(key) if isinstance(key, str) else int(key))
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def rng_for(master: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(derive_seed(master, *keys)))
