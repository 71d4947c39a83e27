"""Deterministic stream derivation from one 64-bit master seed.

Every independent random consumer (a chain, a replicate, a generation task)
gets its own PCG64 stream through a documented SeedSequence spawn key:
(domain tag, index...). Identical (seed, key) pairs always reproduce the
same stream; distinct keys give statistically independent streams.
"""

from __future__ import annotations

import numpy as np

_DOMAINS = {"chain": 0, "replicate": 1, "truth": 2, "panel": 3}


def derive_rng(seed: int, domain: str, *indices: int) -> np.random.Generator:
    """PCG64 generator for (seed, domain, indices)."""
    key = (_DOMAINS[domain],) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
