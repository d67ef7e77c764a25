"""Seeded, counter-based random streams.

Every random quantity in the package is drawn from a Philox generator keyed by
``SeedSequence(seed, spawn_key=(domain, stream_id))``.  Within a stream the
draws are consumed in generation order, so the value used at generation ``u``
is fixed by ``(seed, domain, stream_id, u)`` and does not depend on how many
workers run or how draws are buffered.
"""
from __future__ import annotations

import numpy as np

# stream domains; replicate-indexed streams never collide across domains
ENV = 1
GAMMA = 2
SIM = 3
ERGODIC = 4
LIMIT = 5
ZREC = 6


def make_rng(seed: int, domain: int, stream_id: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(domain), int(stream_id)))
    return np.random.Generator(np.random.Philox(ss))
