"""Deterministic seed derivation.

All randomness flows through generators built from integer key paths, so any
unit of work (replication, perturbation index, CV shuffle) can be re-derived
independently of scheduling or worker count.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

SeedPath = tuple[int, ...]


def seed_path(*keys: int | Sequence[int]) -> SeedPath:
    """Flatten integers and integer sequences into one key path."""
    flat: list[int] = []
    for k in keys:
        if isinstance(k, (int, np.integer)):
            flat.append(int(k))
        else:
            flat.extend(int(x) for x in k)
    return tuple(flat)


def generator(*keys: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator keyed by the given path."""
    return np.random.default_rng(np.random.SeedSequence(seed_path(*keys)))
