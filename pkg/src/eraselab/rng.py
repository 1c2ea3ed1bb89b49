"""Deterministic random-stream handling.

Every stochastic task draws from an :class:`RngStream`, a (seed, stream)
pair mapped to an independent PCG64 generator through
``SeedSequence(entropy=seed, spawn_key=(stream,))``. The same pair always
yields a bit-identical sequence, which is what makes whole runs replayable.
Stream ids are assigned statically by callers (one id per task), never
derived dynamically, so collisions cannot happen by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = 2**64


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            if not 0 <= int(value) < _U64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; repeated calls restart the sequence."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def with_stream(self, stream: int) -> "RngStream":
        return RngStream(int(self.seed), int(stream))


def as_generator(rng) -> np.random.Generator:
    """Accept either an RngStream or a live Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")
