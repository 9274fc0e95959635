from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for one purpose ("init", "sparsify", ...) under ``seed``.

    The same (seed, purpose) always yields the same stream, and streams for
    different purposes do not overlap in practice.
    """
    return np.random.default_rng([int(seed), zlib.crc32(purpose.encode("ascii"))])
