"""Reproducible random streams.

Every stream is a Philox-4x64-10 counter-based generator whose 128-bit key
is ``(seed, stream_id)``; the counter starts at zero. Uniforms are taken
from the top 52 bits of each raw 64-bit output as ``(k + 0.5) / 2**52``,
which lies strictly inside (0, 1), and normals are produced from those
uniforms by :func:`carstat.distributions.normal_quantile`. Any
implementation of Philox-4x64-10 with the same key layout reproduces the
streams bit for bit.
"""

from __future__ import annotations

import numpy as np

from .distributions import normal_quantile

_MASK64 = (1 << 64) - 1
_SCALE = 2.0 ** -52


class Stream:
    """One independent random stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size: int) -> np.ndarray:
        raw = self._bits.random_raw(size)
        return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * _SCALE

    def uniform1(self) -> float:
        return (float(int(self._bits.random_raw()) >> 12) + 0.5) * _SCALE

    def normal(self, size: int) -> np.ndarray:
        return normal_quantile(self.uniform(size))
