"""Deterministic pseudo-random streams (splitmix64).

Every random decision in the simulator draws from this generator so that a
(seed, schedule) pair always replays to the same trace.  The algorithm is
the public-domain splitmix64 mixer:

    state += 0x9E3779B97F4A7C15                      (mod 2^64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9         (mod 2^64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB         (mod 2^64)
    output = z ^ (z >> 31)

Floats in [0, 1) take the top 53 bits of one output.  Reimplementing these
four lines is enough to replay any stream in an external oracle.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """64-bit splitmix generator; one instance per independent stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_u32(self) -> int:
        return self.next_u64() & 0xFFFFFFFF

    def random(self) -> float:
        """Uniform float in [0, 1), 53-bit resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "little")
        return bytes(out[:n])


def derive_seed(seed: int, salt: int) -> int:
    """Child seed for an independent stream of the given scenario seed.

    Streams: 0 = link medium, 1 = node A ISS, 2 = node B ISS,
    3 = application payload generation.
    """
    return SplitMix64((seed & _MASK64) ^ ((salt * _GOLDEN) & _MASK64)).next_u64()
