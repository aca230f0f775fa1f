"""Counter-based random number generation.

Every seeded operation in the library draws from a Philox generator keyed by
(seed, tag, index). Streams are independent of execution order and thread
count, so per-item draws can be made in any order (or in parallel) and still
reproduce bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def _key(seed: int, tag: str, index: int) -> np.ndarray:
    # Stable across processes and platforms; Python's hash() is salted, so
    # derive the Philox key from a cryptographic digest instead.
    digest = hashlib.sha256(f"{seed}|{tag}|{index}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for (seed, tag, index)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, tag, index)))
