"""Deterministic seed derivation.

One top-level 64-bit seed is mixed into named substreams so that adding or
reordering consumers never shifts another stream. The mixer is splitmix64,
fixed here so derived seeds are stable across platforms and library versions.
"""
from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output step for the 64-bit state ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _part_to_int(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return part & _MASK64


def derive_seed(base: int, *parts: int | str) -> int:
    """Mix ``base`` with string/integer labels into a new 64-bit seed."""
    state = base & _MASK64
    for part in parts:
        state = splitmix64(state ^ _part_to_int(part))
    return state
