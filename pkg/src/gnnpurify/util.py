"""Seeding helpers shared across modules."""

from __future__ import annotations

import numpy as np


def rng_from(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator keyed by a base seed plus stream labels.

    Distinct key tuples give statistically independent streams, so one
    experiment seed can fan out to shuffling, trigger placement, slice
    directions, etc. without the streams colliding.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]]))
