"""Deterministic RNG substream derivation.

Every randomized step in the package draws from its own PCG64 stream keyed
by ``(seed, purpose tag, indices...)``.  Keying streams by index rather than
by draw order means parallel or reordered execution cannot change results.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. One per independently seeded subsystem.
TREE_NODE = 1
MINING = 2
AUGMENT = 3
SYNTH = 4
NOISE = 5
FUZZ = 6


def normalize_seed(seed) -> tuple[int, ...]:
    """Coerce an int or tuple-of-ints seed into a non-negative int tuple."""
    if isinstance(seed, (int, np.integer)):
        seed = (int(seed),)
    parts = tuple(int(p) for p in seed)
    if any(p < 0 for p in parts):
        raise ValueError(f"seed parts must be non-negative, got {parts}")
    return parts


def substream(seed, *indices) -> np.random.Generator:
    """Return the generator for substream ``(seed..., indices...)``."""
    key = normalize_seed(seed) + tuple(int(i) for i in indices)
    return np.random.default_rng(key)
