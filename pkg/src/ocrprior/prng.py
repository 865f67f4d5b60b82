"""Portable seeded generator for reproducible perturbation stimuli.

xoshiro256** (Blackman & Vigna) with state expanded from a 64-bit seed by
splitmix64. Every derived operation (floats, bounded integers, shuffles) is
defined here so another implementation can reproduce the same stream bit for
bit.
"""

from __future__ import annotations

import hashlib
from typing import MutableSequence, TypeVar

MASK64 = (1 << 64) - 1
T = TypeVar("T")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(next_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, name: str) -> int:
    """Child seed: first 8 bytes (little-endian) of SHA-256 over ``"<seed>:<name>"``."""
    digest = hashlib.sha256(f"{seed & MASK64}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Xoshiro256:
    def __init__(self, seed: int = 0, *, state: tuple[int, int, int, int] | None = None):
        if state is not None:
            if not any(state):
                raise ValueError("xoshiro256 state must not be all zero")
            self.s = [x & MASK64 for x in state]
            return
        sm = seed & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection on the full 64-bit word."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(n)`` in selection order
        (partial Fisher-Yates from the front)."""
        if not 0 <= k <= n:
            raise ValueError("k must be in [0, n]")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
