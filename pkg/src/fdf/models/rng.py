"""Seeded random substreams.

Each consumer asks for ``substream(seed, *key)``; the key (e.g. tree index,
fold index) selects an independent Philox counter stream, so draws do not
depend on evaluation order or on how work is split across threads.
"""
import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
