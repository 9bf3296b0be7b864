from typing import List, Optional, Sequence

import numpy as np

from utils.errors import InfeasibleSchemeError
from utils.log import logger

from .base import HashFunctionBuilder
from .scheme import HashFunction

NEIGHBOR_POOL_FACTOR = 4


def _unit_rows(embeddings: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    return np.divide(embeddings, norms, out=np.zeros_like(embeddings), where=norms > 0)


class CoherentBuilder(HashFunctionBuilder):
    """Greedy equal-size buckets of embedding-similar entities.

    Entities are visited in decreasing frequency (ties by id). Each unassigned
    entity opens a bucket and pulls in its nearest unassigned neighbours by
    cosine similarity, searched among the ``neighbor_pool`` most similar. With a
    constraint function, a candidate that shares a constraint bucket with any
    current member is skipped. If the pool runs dry, the least frequent
    unassigned entities that satisfy the constraint fill the bucket; when none
    is left, a free entity trades places with a member of an earlier bucket.
    """

    def __init__(
        self,
        embeddings: np.ndarray,
        frequencies: np.ndarray,
        alpha: int,
        constrained: bool = False,
        neighbor_pool: Optional[int] = None,
    ):
        super().__init__(alpha)
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.frequencies = np.asarray(frequencies, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != self.frequencies.size:
            raise ValueError("embeddings must be an N x d matrix matching the frequency vector")
        if np.any(self.frequencies < 0):
            raise ValueError("frequencies must be non-negative")
        self.constrained = constrained
        self.neighbor_pool = neighbor_pool or NEIGHBOR_POOL_FACTOR * alpha

    def build(self, n_entities: int, previous: Sequence[np.ndarray]) -> HashFunction:
        constraint = np.asarray(previous[-1], dtype=np.int64) if self.constrained and previous else None
        return HashFunction.from_forward(self._assign(n_entities, constraint), self.hash_size(n_entities))

    def _assign(self, n: int, constraint: Optional[np.ndarray]) -> np.ndarray:
        if self.embeddings.shape[0] != n:
            raise ValueError(f"embedding rows ({self.embeddings.shape[0]}) do not match N={n}")
        if constraint is not None and constraint.shape != (n,):
            raise ValueError("constraint must be a forward array over the same N entities")
        self.hash_size(n)

        ids = np.arange(n)
        unit = _unit_rows(self.embeddings)
        visit_order = np.lexsort((ids, -self.frequencies))
        fallback_order = np.lexsort((ids, self.frequencies))
        free = np.ones(n, dtype=bool)
        buckets: List[List[int]] = []
        remaining = n

        for seed_id in visit_order:
            if not free[seed_id]:
                continue
            members: List[int] = [int(seed_id)]
            free[seed_id] = False
            blocked = {int(constraint[seed_id])} if constraint is not None else set()
            target = min(self.alpha, remaining)

            def admit(candidate: int) -> None:
                members.append(candidate)
                free[candidate] = False
                if constraint is not None:
                    blocked.add(int(constraint[candidate]))

            if len(members) < target:
                candidates = np.flatnonzero(free)
                similarity = unit[candidates] @ unit[seed_id]
                nearest = candidates[np.lexsort((candidates, -similarity))[: self.neighbor_pool]]
                for candidate in nearest:
                    if constraint is not None and int(constraint[candidate]) in blocked:
                        continue
                    admit(int(candidate))
                    if len(members) == target:
                        break

            if len(members) < target:
                for candidate in fallback_order[free[fallback_order]]:
                    if constraint is not None and int(constraint[candidate]) in blocked:
                        continue
                    admit(int(candidate))
                    if len(members) == target:
                        break

            while len(members) < target:
                swapped = self._swap_in(members, blocked, buckets, constraint, fallback_order[free[fallback_order]])
                if swapped is None:
                    raise InfeasibleSchemeError(
                        f"coherent bucket {len(buckets)} (opened by entity {seed_id}) holds {len(members)} of {target} "
                        f"entities; no remaining candidate satisfies the constraint"
                    )
                joined, placed = swapped
                free[placed] = False
                members.append(joined)
                blocked.add(int(constraint[joined]))

            buckets.append(members)
            remaining -= len(members)

        assigned = np.full(n, -1, dtype=np.int64)
        for bucket, members in enumerate(buckets):
            assigned[members] = bucket
        logger.info(
            f"built coherent hash function: {len(buckets)} buckets, alpha={self.alpha}, constrained={constraint is not None}"
        )
        return assigned

    @staticmethod
    def _swap_in(
        members: List[int], blocked: set, buckets: List[List[int]], constraint: np.ndarray, pool: np.ndarray
    ) -> Optional[tuple]:
        """Trade a blocked free entity for a member of an earlier bucket.

        Finds an earlier member ``y`` whose constraint bucket is not yet used by
        ``members`` and a free entity ``x`` that may take ``y``'s place. Returns
        ``(y, x)`` after moving ``x`` into the earlier bucket, or None.
        """
        for x in pool:
            x = int(x)
            for other in buckets:
                used = [int(constraint[o]) for o in other]
                for slot, y in enumerate(other):
                    if used[slot] in blocked:
                        continue
                    if int(constraint[x]) in used[:slot] + used[slot + 1 :]:
                        continue
                    other[slot] = x
                    return y, x
        return None


def build_coherent_scheme(
    embeddings: np.ndarray,
    frequencies: np.ndarray,
    alpha: int,
    constraint: Optional[np.ndarray] = None,
    neighbor_pool: Optional[int] = None,
) -> HashFunction:
    """Build one coherent hash function, optionally separated from ``constraint``.

    ``constraint`` is the forward array of an existing function; entities sharing
    a bucket there never share one here.
    """
    builder = CoherentBuilder(embeddings, frequencies, alpha, constrained=constraint is not None, neighbor_pool=neighbor_pool)
    n = builder.embeddings.shape[0]
    return builder.build(n, [constraint] if constraint is not None else [])
