"""Random stream splitting.

Every random draw in the package comes from a generator keyed by
``(master_seed, purpose, replica, sub)``. The purpose tags are fixed integers,
so a stream never depends on how work is laid out across workers or batches.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 1,
    "noise": 2,
    "labels": 3,
    "oracle": 4,
    "evaluator": 5,
    "sde": 6,
    "means": 7,
    "self_comparison": 8,
    "battery": 9,
    "clt": 10,
    "chain": 11,
    "probe": 12,
    "volatility": 13,
}


def stream(master_seed: int, purpose: str, replica: int = 0, sub: int = 0) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(PURPOSES[purpose], int(replica), int(sub)))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(master_seed: int, purpose: str, replica: int = 0) -> int:
    """A derived master seed whose streams are disjoint from ``master_seed``'s."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(PURPOSES[purpose], int(replica), 1 << 20))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)
