"""Portable PCG32 generator used wherever dataset identity must be reproducible.

This is the ``pcg32`` (XSH-RR 64/32) generator of M. O'Neill:

    state' = state * 6364136223846793005 + inc   (mod 2**64)
    out    = rotr32(((state >> 18) ^ state) >> 27, state >> 59)

seeded with ``pcg32_srandom(initstate, initseq)``. Floats are built from
the top 53 bits of two consecutive outputs, normals by Box-Muller. Nothing
here depends on numpy's or Python's default generators, so a phantom is
the same on every runtime that implements the same recurrences.
"""

from __future__ import annotations

import hashlib
import math
import zlib

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


class PCG32:
    """Minimal pcg32 stream with a handful of distribution helpers."""

    def __init__(self, seed: int, stream: int = 54) -> None:
        self.inc = ((stream << 1) | 1) & _MASK64
        self.state = 0
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        hi = self.next_u32() >> 5
        lo = self.next_u32() >> 6
        return (hi * 67108864.0 + lo) / 9007199254740992.0

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high] inclusive (modulo bias is negligible here)."""
        span = high - low + 1
        return low + self.next_u32() % span

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of ints and strings."""
    text = "/".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little") >> 1


def image_seed(seed: int, image_id: str) -> int:
    """Per-image seed ``seed XOR crc32(image_id)``, identical in serial and parallel runs."""
    return (int(seed) ^ zlib.crc32(image_id.encode("utf-8"))) & 0x7FFFFFFFFFFFFFFF
