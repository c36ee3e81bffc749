"""Deterministic seeded randomness with derived per-index substreams.

All stochastic operations in the library take an explicit ``SeededRng``
handle; nothing touches global generator state. Substream seeds derive as
``seed XOR mix64(index)``, so a loop over indices and a parallel map over
the same indices consume identical streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(index: int) -> int:
    """SplitMix64 finalizer applied to the golden-ratio multiple of index.

    Fixed 64-bit mixing function for substream derivation. The +1 offset
    keeps mix64(0) nonzero so a child never aliases its parent seed.
    """
    x = ((int(index) + 1) * _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class SeededRng:
    """Immutable handle naming a random stream.

    The handle itself carries no mutable state; ``generator()`` returns a
    fresh ``numpy.random.Generator`` seeded from it, so repeated calls
    replay the same stream.
    """

    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    def child(self, index: int) -> "SeededRng":
        """Derive the substream handle for the given index."""
        return SeededRng(self.seed ^ mix64(index))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))
