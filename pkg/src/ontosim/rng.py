"""Reproducible random streams.

Every consumer of randomness asks for a stream by label.  The stream key is
the first 128 bits of SHA-256 over ``"<seed>|<label>"`` and seeds a Philox
counter-based generator, so a stream depends only on the master seed and its
label, never on the order in which other streams were created or consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, label: str) -> int:
    """128-bit Philox key for ``(seed, label)``."""
    digest = hashlib.sha256(f"{int(seed)}|{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label)))


def derive_seed(seed: int, label: str) -> int:
    """A 63-bit child seed, for handing a whole run its own master seed."""
    return stream_key(seed, label) & ((1 << 63) - 1)
