"""Deterministic RNG construction from composite integer seeds."""

import numpy as np

_MASK = (1 << 64) - 1

# Stream tags keep operations that share one run seed on independent streams.
STREAM_GENERATE = 0
STREAM_SHUFFLE = 1
STREAM_SPLIT = 2
STREAM_GRADE = 3
STREAM_BRANCH_LABEL = 4


def seeded_rng(*parts: int) -> np.random.Generator:
    """Generator keyed by a tuple of integers; negatives fold to uint64."""
    return np.random.default_rng([int(p) & _MASK for p in parts])
