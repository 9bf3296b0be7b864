from typing import Sequence

import numpy as np

from utils.errors import InfeasibleSchemeError
from utils.log import logger
from utils.rng import derive_seed

from .base import HashFunctionBuilder
from .scheme import HashFunction, HashScheme, VocabSpec, colliding_ids, hash_size_for

MAX_ATTEMPTS = 64
REPAIR_ROUNDS = 256


def equal_buckets(permutation: np.ndarray, hash_size: int) -> np.ndarray:
    """Map the p-th entity of a permutation to token floor(p * H / N).

    Buckets are consecutive runs of the permutation; their sizes differ by at
    most one and equal N / H exactly when H divides N.
    """
    n = permutation.size
    forward = np.empty(n, dtype=np.int64)
    forward[permutation] = (np.arange(n, dtype=np.int64) * hash_size) // n
    return forward


class RandomPermutationBuilder(HashFunctionBuilder):
    """Random-permutation hashing with every consecutive run of entities sharing a token.

    When ``require_unique_digests`` is set and earlier functions are given, the
    new function is repaired so that no two entities agree on every function:
    colliding entities swap their token with a random partner (swaps keep
    bucket sizes) for up to ``repair_rounds`` rounds, then the permutation is
    re-drawn with ``seed + attempt``.
    """

    def __init__(
        self,
        alpha: int,
        seed: int,
        index: int = 0,
        require_unique_digests: bool = True,
        max_attempts: int = MAX_ATTEMPTS,
        repair_rounds: int = REPAIR_ROUNDS,
    ):
        super().__init__(alpha)
        self.seed = seed
        self.index = index
        self.require_unique_digests = require_unique_digests
        self.max_attempts = max_attempts
        self.repair_rounds = repair_rounds

    def _draw(self, n_entities: int, hash_size: int, attempt: int) -> tuple:
        rng = np.random.default_rng(derive_seed(self.seed + attempt, self.index))
        return equal_buckets(rng.permutation(n_entities), hash_size), rng

    def _repair(self, forward: np.ndarray, previous: Sequence[np.ndarray], hash_size: int, rng) -> bool:
        n = forward.size
        for _ in range(self.repair_rounds):
            clashes = colliding_ids(np.stack([*previous, forward]), hash_size)
            if clashes.size == 0:
                return True
            partners = rng.integers(0, n, size=clashes.size)
            for a, b in zip(clashes, partners):
                forward[a], forward[b] = forward[b], forward[a]
        return colliding_ids(np.stack([*previous, forward]), hash_size).size == 0

    def build(self, n_entities: int, previous: Sequence[np.ndarray]) -> HashFunction:
        hash_size = self.hash_size(n_entities)
        check = self.require_unique_digests and (len(previous) > 0 or self.alpha > 1)
        if check and hash_size ** (len(previous) + 1) < n_entities:
            raise InfeasibleSchemeError(
                f"{len(previous) + 1} functions with hash_size={hash_size} cannot separate N={n_entities} entities"
            )

        for attempt in range(self.max_attempts):
            forward, rng = self._draw(n_entities, hash_size, attempt)
            if not check or self._repair(forward, previous, hash_size, rng):
                if attempt:
                    logger.warning(f"hash function {self.index} needed {attempt + 1} draws to avoid complete collisions")
                return HashFunction.from_forward(forward, hash_size)
        raise InfeasibleSchemeError(
            f"could not avoid complete collisions after {self.max_attempts} draws "
            f"(N={n_entities}, m={len(previous) + 1}, alpha={self.alpha})"
        )


def build_random_scheme(
    spec: VocabSpec,
    m: int,
    alpha: int,
    seed: int,
    require_unique_digests: bool = True,
) -> HashScheme:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if alpha > spec.size:
        raise InfeasibleSchemeError(f"alpha={alpha} exceeds the vocabulary size N={spec.size}")

    functions = []
    for j in range(m):
        # Only the last function can complete a collision.
        builder = RandomPermutationBuilder(
            alpha,
            seed,
            index=j,
            require_unique_digests=require_unique_digests and j == m - 1,
        )
        functions.append(builder.build(spec.size, [f.forward for f in functions]))

    scheme = HashScheme(functions, alpha, spec.specials)
    logger.info(
        f"built random scheme N={spec.size} m={m} alpha={alpha} hash_size={hash_size_for(spec.size, alpha)} seed={seed}"
    )
    return scheme
