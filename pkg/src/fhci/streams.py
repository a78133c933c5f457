"""Counter-based random streams.

Every replicate gets its own Philox4x64 stream: the key comes from the
user seed, and the 256-bit counter is offset by ``(stream, index)`` in its
two high words.  Draws for replicate ``r`` therefore never depend on how
replicates are scheduled across workers.  Normal variates use numpy's
ziggurat sampler (``Generator.standard_normal``).
"""

from __future__ import annotations

import functools

import numpy as np

REPLICATES = 0
COVARIATES = 1
MOMENTS = 2


@functools.lru_cache(maxsize=256)
def _key(seed: int) -> tuple[int, int]:
    k = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return int(k[0]), int(k[1])


def generator(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``."""
    if index < 0 or stream < 0:
        raise ValueError("stream and index must be nonnegative")
    key = np.array(_key(int(seed)), dtype=np.uint64)
    counter = np.array([0, 0, stream, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
