"""Named, reproducible random streams.

Every consumer of randomness asks for a stream by ``(seed, name, *keys)``, so
changing how much randomness one stage uses never shifts another stage.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf8"))


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _MASK,
                                spawn_key=(stream_key(name),) + tuple(int(k) & _MASK for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed, e.g. for trial ``t`` of an experiment."""
    ss = np.random.SeedSequence(int(seed) & _MASK, spawn_key=tuple(int(k) & _MASK for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
