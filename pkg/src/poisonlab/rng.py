"""Deterministic, counter-based random number streams.

Every stochastic operation in the package draws from an ``RngStream``
addressed by ``(master_seed, stream_id)``. Streams are backed by the
Philox counter-based bit generator, so a stream's output depends only on
its address and the call sequence, never on global state. Child streams
derived via :meth:`RngStream.spawn` are statistically independent, which
makes parallel per-sample execution bit-identical to serial execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (full 64-bit avalanche)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_stream_id(parent_id: int, index: int) -> int:
    return _splitmix64(_splitmix64(parent_id & _MASK64) ^ (index & _MASK64))


@dataclass
class RngStream:
    """A seeded random stream; ``(master_seed, stream_id)`` fully determine it."""

    master_seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = [self.master_seed & _MASK64, self.stream_id & _MASK64]
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, index: int) -> "RngStream":
        """Derive an independent child stream for sample/step ``index``."""
        return RngStream(self.master_seed, derive_stream_id(self.stream_id, index))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float32)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        u = self._gen.random(shape, dtype=np.float64)
        return low + (high - low) * u

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)
