"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for stage ``name`` (data, noise, init, shuffle, pseudo, ...)."""
    key = [int(seed), zlib.crc32(name.encode()), *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
