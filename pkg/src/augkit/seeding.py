"""Per-sample seed derivation; every random draw in augkit flows from here."""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(root: int, *parts) -> int:
    """Stable 64-bit seed from a root seed and any string-able parts."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root) & MASK64).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & MASK64)
