"""Reproducible named random streams derived from one root seed.

Every source of randomness (demand sampling, weight init, exploration,
attack noise) pulls from its own stream so adding draws to one consumer
never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_stream(root_seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``, stable across runs and platforms."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, tag]))
