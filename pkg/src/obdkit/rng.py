"""Reproducible random streams for Monte Carlo replications.

Streams come from the Philox 4x64-10 counter-based generator, which is
splittable by key: replication r of a run with master seed s owns the
stream keyed (s, r). Results therefore depend only on (seed, replication
index), never on scheduling or the degree of parallelism, and the algorithm
name is pinned in every output so runs can be reproduced elsewhere.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10"

_MASK64 = (1 << 64) - 1


def replication_stream(master_seed: int, rep_index: int) -> np.random.Generator:
    """Independent generator for one replication of a seeded run."""
    if master_seed < 0 or rep_index < 0:
        raise ValueError("seed and replication index must be non-negative")
    key = np.array([master_seed & _MASK64, rep_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
