"""Named, independently seeded random streams.

Every stream is Philox4x64-10 keyed by ``(seed, stream_id)`` with its counter
starting at zero, as provided by ``numpy.random.Philox``; uniforms are
``(x >> 11) * 2**-53`` of successive 64-bit outputs (numpy's
``Generator.random``). Exponentials use inverse transform,
``-log1p(-u) / rate``. The same (seed, stream id) therefore yields the same
sequence on any platform, independent of how many other streams exist.
"""

from __future__ import annotations

import math

import numpy as np

BLOCK = 8192

# stream id layout; per-entity ids are offset by the entity's index
ARRIVALS = 0
ROUTING = 1 << 20
SERVICE = 2 << 20
ARBITER = 3 << 20


class Stream:
    __slots__ = ("_gen", "_buf", "_pos")

    def __init__(self, seed: int, stream_id: int):
        key = np.array([seed & (2**64 - 1), stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._buf = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)])


class ExpStream:
    """Unit exponentials drawn in blocks; divide by the rate at the call site."""

    __slots__ = ("_gen", "_buf", "_pos")

    def __init__(self, seed: int, stream_id: int):
        key = np.array([seed & (2**64 - 1), stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._buf = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            # scalar libm log1p: numpy's vectorised kernels may differ by an ulp across CPUs
            log1p = math.log1p
            self._buf = [-log1p(-u) for u in self._gen.random(BLOCK).tolist()]
            self._pos = 0
        e = self._buf[self._pos]
        self._pos += 1
        return e
