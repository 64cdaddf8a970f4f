"""Counter-based SplitMix64 streams.

The n-th output (n = 0, 1, ...) of a stream seeded with ``seed`` is

    z = seed + (n + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

which is exactly the sequential SplitMix64 generator, but computable for any
block of indices at once. Uniform doubles use the top 53 bits:
``(z >> 11) * 2**-53``, so every value lies in [0, 1).

Only integer shifts, xors and wrapping multiplies are involved, so the
streams are bit-identical on every platform.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a single Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def substream(seed: int, index: int) -> int:
    """Seed of an independent child stream, e.g. one per image id."""
    return mix64((seed & _MASK) + (index + 1) * GOLDEN)


class SplitMix64:
    """Sequential view of a counter-based SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers in [0, high) via floor(u * high)."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)
