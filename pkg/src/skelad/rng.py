"""Splittable deterministic random streams.

Streams are backed by the counter-based Philox generator keyed through a
``SeedSequence`` with an explicit spawn key, so a stream's output depends
only on ``(seed, lineage)`` and never on how many draws sibling streams
have made or on execution order. That makes batched, threaded, and
sequential schedules produce bit-identical results as long as each unit
of work draws from its own split.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    """A deterministic random stream identified by a seed and a lineage.

    ``split(label)`` derives a child stream whose output is a pure function
    of ``(seed, lineage + (label,))`` -- independent of the parent's
    position and of any other split.
    """

    def __init__(self, seed: int, lineage: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.lineage = tuple(int(x) for x in lineage)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.lineage)
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._draws = 0

    def split(self, label: int) -> "RngStream":
        return RngStream(self.seed, self.lineage + (int(label),))

    @property
    def position(self) -> int:
        """Number of draw calls made on this stream so far."""
        return self._draws

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        self._draws += 1
        out = self._gen.standard_normal(size=shape, dtype=np.float64)
        return out.astype(dtype, copy=False)

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        self._draws += 1
        out = self._gen.random(size=shape)
        return out.astype(dtype, copy=False)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in the inclusive range [low, high]."""
        self._draws += 1
        return self._gen.integers(low, high, size=shape, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        self._draws += 1
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, lineage={self.lineage})"
