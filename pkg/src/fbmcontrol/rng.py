"""Counter-based random streams addressed by ``(seed, stream_id)``."""

from __future__ import annotations

import numbers
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError


def _as_key(stream_id):
    if isinstance(stream_id, numbers.Integral) and not isinstance(stream_id, bool):
        key = (int(stream_id),)
    elif isinstance(stream_id, tuple):
        key = tuple(int(k) for k in stream_id)
    else:
        raise ConfigError(f"stream_id must be an int or a tuple of ints, got {stream_id!r}")
    if any(k < 0 for k in key):
        raise ConfigError(f"stream_id entries must be non-negative, got {stream_id!r}")
    return key


@dataclass(frozen=True)
class RngStream:
    """Deterministic Philox stream.

    A stream is a pure address: every call to :meth:`generator` restarts at
    counter zero, so the same ``(seed, stream_id)`` always yields the same
    numbers no matter which process or thread asks for them. Independent
    sub-streams come from :meth:`child`.

    Parameters
    ----------
    seed : int
        Non-negative root seed.
    stream_id : int or tuple of int
        Address of the stream below the root seed.
    """

    seed: int
    stream_id: int | tuple = 0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, numbers.Integral) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        _as_key(self.stream_id)

    @property
    def key(self):
        return _as_key(self.stream_id)

    def child(self, *ids):
        """Sub-stream whose address extends this one by ``ids``."""
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self):
        """Fresh :class:`numpy.random.Generator` positioned at the stream start."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, size):
        """Standard normal draws from the start of the stream."""
        return self.generator().standard_normal(size)
