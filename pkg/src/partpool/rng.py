"""Deterministic named RNG sub-streams derived from one config seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for (seed, name); stable across processes."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def stream_seeds(seed: int, name: str, count: int) -> np.ndarray:
    """Per-item integer seeds drawn from a named sub-stream."""
    return substream(seed, name).integers(0, 2**63 - 1, size=count)
