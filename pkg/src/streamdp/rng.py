"""Splittable counter-based randomness.

Every randomized operation in the package takes an explicit :class:`RandomSource`.
A source is identified by a ``(seed, stream)`` key pair feeding a Philox
counter-based generator, so

* identical ``(seed, stream)`` pairs reproduce identical draw sequences, and
* distinct streams are statistically independent,

which lets disjoint subsystems (noise trees, threshold selection, workload
generation, per-chunk noise) own non-overlapping randomness derived from one
user-facing seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One splitmix64 step; used to derive child stream ids."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RandomSource:
    """A seeded, splittable stream of randomness.

    Parameters
    ----------
    seed : int
        User-facing base seed (any int; reduced mod 2**64).
    stream : int
        Stream id distinguishing independent sub-streams of the same seed.
    """

    __slots__ = ("seed", "stream", "_generator")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying NumPy generator (stateful; draws advance it)."""
        return self._generator

    def substream(self, tag: int) -> "RandomSource":
        """Derive an independent child source; deterministic in (stream, tag)."""
        child = _splitmix64(self.stream ^ _splitmix64((int(tag) + 1) & _MASK64))
        return RandomSource(self.seed, child)

    def uniform(self, size=None):
        """Draws in [0, 1)."""
        return self._generator.random(size)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"
