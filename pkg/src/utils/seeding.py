"""Deterministic seed derivation.

Every random stream in a run is a pure function of the run seed plus a path
of labels (mode, task index, batch index, ...), so streams never overlap and
any one of them can be regenerated in isolation.
"""
from __future__ import annotations

import zlib
from typing import Union

import numpy as np

SeedPart = Union[int, str]


def _encode(part: SeedPart) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"Seed parts must be non-negative, got {part}")
    return int(part)


def seed_sequence(seed: int, *path: SeedPart) -> np.random.SeedSequence:
    """SeedSequence for ``seed`` refined by a path of labels."""
    return np.random.SeedSequence(_encode(seed), spawn_key=tuple(_encode(p) for p in path))


def derive_seed(seed: int, *path: SeedPart) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``path``."""
    state = seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def make_rng(seed: int, *path: SeedPart) -> np.random.Generator:
    """Independent generator for the stream named by ``path``."""
    return np.random.default_rng(seed_sequence(seed, *path))
