"""Seed derivation.

Every random stream is derived from the global seed plus a module name and a
purpose string, so each stage can be rerun on its own and reproduce exactly.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _words(*names) -> list[int]:
    digest = hashlib.sha256("\x1f".join(str(n) for n in names).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_seed(seed: int, *names) -> int:
    """A 64-bit integer seed for the stream named by ``names``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_words(*names)])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_words(*names)]))
