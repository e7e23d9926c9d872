"""Counter-based random streams.

Every random object in the package is drawn from a Philox generator keyed by a
tuple of non-negative integers (master seed, replica id, patch index, purpose,
...).  Streams with different keys are independent, so replicas can run in
any order or process and still produce identical results.
"""

from __future__ import annotations

from typing import Union

import numpy as np

RNG_ID = "numpy.Philox4x64-10+SeedSequence"

SeedLike = Union[int, tuple, list, np.random.Generator]

# purpose tags used as the last element of a stream key
NEG = 0
POS = 1
PLAN = 2
NEG2 = 3
POS2 = 4
FRESH = 5
EXTRA = 6


def generator(seed: SeedLike) -> np.random.Generator:
    """Return a Philox generator for an int or a tuple of ints."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        key = tuple(int(k) for k in seed)
        if not key:
            raise ValueError("empty stream key")
    else:
        key = (int(seed),)
    if any(k < 0 for k in key):
        raise ValueError(f"stream key entries must be non-negative: {key}")
    ss = np.random.SeedSequence(entropy=key[0], spawn_key=key[1:])
    return np.random.Generator(np.random.Philox(ss))


def key(*parts: int) -> tuple:
    return tuple(int(p) for p in parts)
