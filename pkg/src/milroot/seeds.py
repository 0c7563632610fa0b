"""Deterministic seed derivation for stage- and run-scoped RNG streams.

A splitmix64 mix of (base seed, run index, stage tag, ...) gives every
stage of every run its own reproducible stream, so any stage can be
re-run in isolation with identical randomness.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(base: int, *parts: int | str) -> int:
    """Mix a base seed with run indices / stage tags into a 64-bit seed."""
    state = _splitmix64(int(base) & _MASK)
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
            for off in range(0, len(data), 8):
                chunk = int.from_bytes(data[off:off + 8], "little")
                state = _splitmix64(state ^ chunk)
        else:
            state = _splitmix64(state ^ (int(part) & _MASK))
    return state


def rng_from(base: int, *parts: int | str) -> np.random.Generator:
    """PCG64 generator seeded from derive_seed(base, *parts)."""
    return np.random.default_rng(derive_seed(base, *parts))


def seed32(base: int, *parts: int | str) -> int:
    """32-bit variant for RNGs that only accept 32-bit seeds."""
    return derive_seed(base, *parts) & 0xFFFFFFFF
