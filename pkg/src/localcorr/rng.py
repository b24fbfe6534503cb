"""Counter-based random streams for reproducible parallel sampling.

Every block of Monte Carlo paths (and every low-discrepancy partition) owns a
stream keyed by ``(seed, block_index)``.  Philox is counter based, so the
stream a block consumes never depends on how many workers run or in which
order blocks are scheduled; results are bit-identical for a fixed seed and
block layout.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, index: int) -> np.random.Generator:
    """Deterministic generator for block ``index`` of run ``seed``."""
    if index < 0:
        raise ValueError("substream index must be non-negative")
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def sobol_seed(seed: int, index: int) -> np.random.Generator:
    """Scramble seed for low-discrepancy partition ``index``."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(int(index),))
    return np.random.default_rng(ss)
