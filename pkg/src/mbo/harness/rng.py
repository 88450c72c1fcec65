"""Named random streams derived from one 64-bit seed.

Each consumer draws from its own child of ``SeedSequence(seed)``, selected
by a fixed spawn key, so adding draws to one stream never shifts another.

========  =========  ======================================
stream    spawn key  used for
========  =========  ======================================
voronoi   0          Voronoi seed points
oracle    1          random tiny instances of the oracle check
perturb   2          perturbations in property tests
========  =========  ======================================
"""
from __future__ import annotations

import numpy as np

__all__ = ["STREAMS", "stream"]

STREAMS = {"voronoi": 0, "oracle": 1, "perturb": 2}


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named stream of ``seed``."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; expected one of {sorted(STREAMS)}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))
