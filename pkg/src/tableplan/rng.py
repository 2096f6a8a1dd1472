"""SplitMix64 generator with named substreams.

Every stochastic component of the pipeline draws from its own substream so
episodes replay bit-exactly and components can be added or reordered without
perturbing each other's draws.  The whole contract fits in three lines, which
is the point: a port in any language can reproduce the streams.

    substream state0 = mix64(seed XOR fnv1a64(tag))
    next_u64():  state += 0x9E3779B97F4A7C15; return mix64(state)
    random():    top 53 bits of next_u64() scaled by 2**-53

`normal()` is Box-Muller (cosine branch) and always consumes exactly two
64-bit draws.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output scrambler."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 encoding, used to salt substream tags."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """64-bit splittable generator.  State is a single uint64."""

    __slots__ = ("_state",)

    def __init__(self, state: int):
        self._state = state & _MASK64

    @classmethod
    def substream(cls, seed: int, tag: str) -> "Rng":
        return cls(mix64((seed & _MASK64) ^ fnv1a64(tag)))

    def getstate(self) -> int:
        return self._state

    def setstate(self, state: int) -> None:
        self._state = state & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        span = _MASK64 + 1
        limit = span - (span % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # u1 in (0, 1] so the log is finite; exactly two draws per call.
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)
