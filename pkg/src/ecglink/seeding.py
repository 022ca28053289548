"""Stable derivation of stage-specific seeds from one global seed.

A labeled hash keeps stages (split, init, augment, depth, ...) statistically
independent while remaining reproducible across runs and platforms.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map (label, value, ...) parts to a 64-bit seed via sha256."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
