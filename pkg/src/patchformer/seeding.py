"""Deterministic named substreams from one 64-bit run seed.

Each subsystem (split, init, shuffle, cutmix, dropout) draws from its own
generator so the consumption pattern of one cannot shift another.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, name: str) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
