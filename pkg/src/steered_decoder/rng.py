"""Deterministic pseudo-random number generation.

The generator is xoshiro256** seeded from splitmix64, implemented directly so
that the same (algorithm, seed) pair yields identical streams on every
platform and in every implementation language. Floating-point draws are
derived from the integer stream by fixed rules:

- uniform double in [0, 1): take the top 53 bits, scale by 2**-53
- standard normals: Box-Muller on consecutive uniform pairs (u1, u2) with
  u1 mapped to (0, 1] as 1 - u; each pair yields
  sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2)) in that order, and a
  trailing odd draw discards the sine term

Do not substitute a library generator: frozen test vectors and cross-language
weight fixtures depend on this exact stream.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 2.0**-53


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** generator with splitmix64 seeding."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64_next(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def normals(self, count: int, sigma: float = 1.0) -> list[float]:
        """Box-Muller normals with mean 0 and the given sigma."""
        out: list[float] = []
        while len(out) < count:
            u1 = 1.0 - self.uniform()  # (0, 1], keeps log() finite
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1)) * sigma
            out.append(r * math.cos(2.0 * math.pi * u2))
            if len(out) < count:
                out.append(r * math.sin(2.0 * math.pi * u2))
        return out
