from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def derive_seed(global_seed: int, index: int) -> int:
    """Mix a global seed with a segment/example index.

    Uses SeedSequence with the index as spawn key, so neighbouring indices get
    statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(global_seed), spawn_key=(int(index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
