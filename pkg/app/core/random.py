"""
Seed derivation helpers.

Every stochastic component draws from its own generator derived from a master
seed and a label, so adding a consumer never shifts another consumer's stream.
"""

import zlib
from typing import Union

import numpy as np


def derive_seed(master_seed: int, *labels: Union[str, int]) -> int:
    """Deterministic 32-bit seed for (master_seed, labels...)."""
    keys = [int(master_seed) & 0xFFFFFFFF]
    for label in labels:
        keys.append(zlib.crc32(label.encode("utf-8")) if isinstance(label, str) else int(label) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def rng_for(master_seed: int, *labels: Union[str, int]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))
