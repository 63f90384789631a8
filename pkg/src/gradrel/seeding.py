"""Deterministic, platform-independent RNG derivation.

Stage seeds are combined with string tokens (caption ids, worker ids, epoch
tags) through sha256 so every sub-stream is reproducible from the one seed
recorded in the artifact header, on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derived_rng(seed: int, *tokens: str | int) -> np.random.Generator:
    h = hashlib.sha256()
    for token in tokens:
        h.update(str(token).encode("utf-8"))
        h.update(b"\x00")
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    entropy.extend(int.from_bytes(h.digest()[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
