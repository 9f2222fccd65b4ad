"""splitmix64 stream and seed derivation.

Every random decision in a run is keyed through :func:`derive_seed`, so the
value drawn for (seed, class, index) never depends on call order or on how
many worker threads produced it.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """The 64-bit splitmix generator (Steele, Lea & Flood)."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        return _mix(self.state)

    def below(self, bound: int) -> int:
        """Integer in ``[0, bound)``; modulo reduction, bias < bound / 2**64."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound


def splitmix64(*keys: int) -> int:
    """Hash an ordered tuple of integers into one 64-bit seed."""
    h = 0
    for k in keys:
        h = _mix(((h ^ (int(k) & MASK64)) + _GOLDEN) & MASK64)
    return h


derive_seed = splitmix64


def fisher_yates(n: int, seed: int) -> list[int]:
    """Permutation of ``0..n-1`` driven by a splitmix64 stream."""
    order = list(range(n))
    stream = SplitMix64(seed)
    for i in range(n - 1, 0, -1):
        j = stream.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def generator(*keys: int) -> np.random.Generator:
    """numpy Generator seeded from a derived key tuple."""
    return np.random.Generator(np.random.PCG64(derive_seed(*keys)))


# Stream tags, kept distinct so adding a consumer never shifts another stream.
STREAM_INIT = 1
STREAM_BATCH = 2
STREAM_SYNTH_BATCH = 3
STREAM_DATA = 4
STREAM_DIRECTION = 5
STREAM_MEMORY = 6
STREAM_AUGMENT = 7
