"""Seeded PRNG streams.

Every source of randomness in a run draws from its own stream, derived from
the master seed with :class:`numpy.random.SeedSequence` and a fixed spawn key:

    ======================  =====================
    stream                  spawn key
    ======================  =====================
    initial model           ``(0,)``
    quadratic shifts        ``(1,)``
    synthetic dataset       ``(2,)``
    federated split         ``(3,)``
    worker selection        ``(4,)``
    worker ``i`` sampling   ``(100, i)``
    ======================  =====================

Because streams are keyed rather than spawned sequentially, adding workers or
reordering their evaluation never changes the numbers another stream sees.
"""

from __future__ import annotations

import numpy as np

INIT = 0
SHIFTS = 1
DATA = 2
SPLIT = 3
SELECT = 4
WORKER = 100

_MASK64 = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def worker_stream(seed: int, worker_id: int) -> np.random.Generator:
    return stream(seed, WORKER, worker_id)


def worker_streams(seed: int, m: int) -> list[np.random.Generator]:
    return [worker_stream(seed, i) for i in range(m)]
