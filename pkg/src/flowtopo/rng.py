"""Seeded, splittable random streams.

Built on numpy's counter-based Philox generator keyed by (seed, stream_id).
A stream's output depends only on that pair, never on global state or on how
other streams were consumed, so parallel work stays deterministic as long as
each unit of work derives its own child stream.
"""

import numpy as np

from .errors import InvalidInputError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    # Finalizer from the splitmix64 generator; bijective on 64-bit ints.
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """One independent random stream identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        if not isinstance(seed, (int, np.integer)):
            raise InvalidInputError(f"seed must be an integer, got {type(seed).__name__}")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive the index-th child stream; children are mutually independent."""
        mixed = _splitmix64(self.stream_id ^ _splitmix64((int(index) + 1) & _MASK64))
        return RngStream(self.seed, mixed)

    @property
    def counter(self) -> int:
        """128-bit draws consumed so far (low word of the Philox counter)."""
        return int(self._gen.bit_generator.state["state"]["counter"][0])

    def standard_normal(self, shape):
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def normal(self, loc, scale, shape):
        return loc + scale * self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low, high, shape):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high, size):
        """Integers from [low, high), dtype int64."""
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_std_normal(rng: RngStream, n: int, d: int) -> np.ndarray:
    """Draw an (n, d) matrix of standard normal variates from `rng`."""
    if n < 1 or d < 1:
        raise InvalidInputError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return rng.standard_normal((n, d))


# Fixed stream ids so independent phases of a run never share a stream.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_EVAL = 4
STREAM_OOD = 5
STREAM_ZFREEZE = 6
