"""Seeded random streams for paired policy comparisons.

Every simulation owns one `SimStreams` built from a single seed.  The seed
is split into independent named substreams (arrivals, the two channels,
exploration) so that the draws consumed by one concern never shift the
draws seen by another: two policies run on the same seed face the same
arrival sequence, and channel noise only advances on slots where the
corresponding link actually transmits.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 4096


class UniformStream:
    """Buffered stream of uniforms on [0, 1) backed by a PCG64 generator."""

    __slots__ = ("generator", "_buf", "_pos")

    def __init__(self, seed_seq: np.random.SeedSequence):
        self.generator = np.random.Generator(np.random.PCG64(seed_seq))
        self._buf = self.generator.random(_BLOCK)
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == _BLOCK:
            self._buf = self.generator.random(_BLOCK)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p


class SimStreams:
    """Named substreams: arrivals, channel-1, channel-2, exploration.

    ``seed`` may be an int or a tuple of ints (for derived substreams).
    """

    def __init__(self, seed):
        self.seed = seed
        root = np.random.SeedSequence(seed)
        arr, ch1, ch2, expl = root.spawn(4)
        self.arrivals = UniformStream(arr)
        self.channel1 = UniformStream(ch1)
        self.channel2 = UniformStream(ch2)
        self.exploration = UniformStream(expl)
