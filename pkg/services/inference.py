"""Ranking the original vocabulary from m hashed distributions.

An entity ``s`` scores ``c(p_1(h_1(s)), ..., p_m(h_m(s)))`` for an increasing
aggregate ``c``. :func:`exhaustive_rank` scores every id; :func:`beam_search`
expands the inverse buckets of the top ``b`` tokens per function and stops as
soon as the running k-th best score reaches ``c`` of the b-th largest
probabilities, which bounds every entity not yet scored.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from schemas.config import InferConfig, ScoreKind
from services.hashing import HashScheme
from utils.rng import SeedLike, make_rng


class ScoreFunction(ABC):
    kind: str = ""

    @abstractmethod
    def __call__(self, rho: np.ndarray) -> np.ndarray:
        """Aggregate the last axis (length m) of ``rho``."""


class LogSumScore(ScoreFunction):
    kind = ScoreKind.log_sum.value

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        # log(0) is -inf, ordered below every finite score.
        with np.errstate(divide="ignore"):
            return np.sum(np.log(rho), axis=-1)


class MinScore(ScoreFunction):
    kind = ScoreKind.min.value

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return np.min(rho, axis=-1)


class MaxScore(ScoreFunction):
    kind = ScoreKind.max.value

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return np.max(rho, axis=-1)


class CustomScore(ScoreFunction):
    """Any vectorised increasing aggregate; certificates are only as sound as its monotonicity."""

    kind = "custom"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "custom"):
        self.fn = fn
        self.name = name

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(rho), dtype=np.float64)


_SCORE_FUNCTIONS = {
    ScoreKind.log_sum.value: LogSumScore,
    ScoreKind.min.value: MinScore,
    ScoreKind.max.value: MaxScore,
}


def get_score_function(kind) -> ScoreFunction:
    kind = kind.value if isinstance(kind, ScoreKind) else str(kind)
    if kind not in _SCORE_FUNCTIONS:
        raise ValueError(f"unknown score function {kind!r}; choose from {sorted(_SCORE_FUNCTIONS)}")
    return _SCORE_FUNCTIONS[kind]()


def check_increasing(score_fn: ScoreFunction, m: int, samples: int = 1000, seed: SeedLike = 0) -> bool:
    """Spot-check that raising any coordinate of rho never lowers the score."""
    rng = make_rng(seed)
    low = 1.0 - rng.random((samples, m))  # (0, 1]
    high = low + rng.random((samples, m)) * (1.0 - low)
    return bool(np.all(score_fn(high) >= score_fn(low)))


@dataclass(frozen=True)
class BeamParams:
    beam: int = 20
    iters: Optional[int] = 1  # None iterates until the certificate holds
    k: int = 1

    def __post_init__(self):
        if self.beam < 1 or self.k < 1 or (self.iters is not None and self.iters < 1):
            raise ValueError(f"beam, k and iters must be >= 1, got {self}")

    @classmethod
    def from_config(cls, config: InferConfig) -> "BeamParams":
        return cls(beam=config.beam, iters=config.iters or None, k=config.k)


@dataclass
class RankedResult:
    items: np.ndarray
    scores: np.ndarray
    exact: bool
    candidates_scored: int
    iterations_used: int

    def rank_of(self, entity: int) -> Optional[int]:
        """1-based rank of ``entity`` among the returned items, or None."""
        hits = np.flatnonzero(self.items == entity)
        return int(hits[0]) + 1 if hits.size else None


def _check_prediction(probs: np.ndarray, scheme: HashScheme) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (scheme.m, scheme.hash_size):
        raise ValueError(f"prediction must have shape (m, hash_size) = {(scheme.m, scheme.hash_size)}, got {probs.shape}")
    return probs


def _score(score_fn: ScoreFunction, probs: np.ndarray, scheme: HashScheme, ids: np.ndarray) -> np.ndarray:
    rho = probs[np.arange(scheme.m)[:, None], scheme.forward[:, ids]].T
    return np.asarray(score_fn(rho), dtype=np.float64)


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int):
    order = np.lexsort((ids, -scores))[:k]
    return ids[order], scores[order]


def gamma(score_fn: ScoreFunction, probs: np.ndarray, scheme: HashScheme, s: int) -> float:
    """Score of entity ``s`` under one position's distributions ``probs`` (m x hash_size)."""
    if not 0 <= s < scheme.n_entities:
        raise IndexError(f"entity id {s} outside [0, {scheme.n_entities})")
    probs = _check_prediction(probs, scheme)
    return float(_score(score_fn, probs, scheme, np.array([s]))[0])


def exhaustive_rank(score_fn: ScoreFunction, probs: np.ndarray, scheme: HashScheme, k: int) -> RankedResult:
    if not 1 <= k <= scheme.n_entities:
        raise ValueError(f"k must lie in [1, {scheme.n_entities}], got {k}")
    probs = _check_prediction(probs, scheme)
    ids = np.arange(scheme.n_entities, dtype=np.int64)
    items, scores = _top_k(ids, _score(score_fn, probs, scheme, ids), k)
    return RankedResult(items=items, scores=scores, exact=True, candidates_scored=scheme.n_entities, iterations_used=0)


def beam_search(score_fn: ScoreFunction, probs: np.ndarray, scheme: HashScheme, params: BeamParams) -> RankedResult:
    k = params.k
    if k > scheme.n_entities:
        raise ValueError(f"k={k} exceeds the vocabulary size {scheme.n_entities}")
    probs = _check_prediction(probs, scheme)
    m, hash_size = probs.shape
    token_order = np.argsort(-probs, axis=1, kind="stable")
    sorted_probs = np.take_along_axis(probs, token_order, axis=1)

    scored = np.zeros(scheme.n_entities, dtype=bool)
    expanded = np.zeros(m, dtype=np.int64)  # tokens of each function whose buckets are already scored
    best_ids = np.zeros(0, dtype=np.int64)
    best_scores = np.zeros(0, dtype=np.float64)
    iteration = 0
    exact = False
    while True:
        iteration += 1
        b = min(iteration * params.beam, hash_size)
        thresholds = sorted_probs[:, b - 1]
        chunks = []
        for j in range(m):
            # Tokens tied with the threshold are included as well.
            n_tokens = int(np.count_nonzero(sorted_probs[j] >= thresholds[j]))
            function = scheme.functions[j]
            chunks.extend(function.bucket(int(t)) for t in token_order[j, expanded[j] : n_tokens])
            expanded[j] = max(expanded[j], n_tokens)
        fresh = np.zeros(0, dtype=np.int64)
        if chunks:
            candidates = np.unique(np.concatenate(chunks))
            fresh = candidates[~scored[candidates]]
            scored[fresh] = True

        if fresh.size:
            best_ids, best_scores = _top_k(
                np.concatenate((best_ids, fresh)),
                np.concatenate((best_scores, _score(score_fn, probs, scheme, fresh))),
                k,
            )

        if b == hash_size or scored.all():
            exact = True
            break
        bound = float(score_fn(thresholds))
        if best_ids.size >= k and best_scores[k - 1] >= bound:
            exact = True
            break
        if params.iters is not None and iteration >= params.iters:
            break

    return RankedResult(
        items=best_ids,
        scores=best_scores,
        exact=exact,
        candidates_scored=int(scored.sum()),
        iterations_used=iteration,
    )


def certificate_check(result: RankedResult, probs: np.ndarray, scheme: HashScheme, score_fn: ScoreFunction) -> bool:
    """Full scan: an exact result must hold the true scores and nothing outside may beat its last item."""
    if not result.exact:
        return True
    probs = _check_prediction(probs, scheme)
    every = _score(score_fn, probs, scheme, np.arange(scheme.n_entities))
    if not np.array_equal(every[result.items], result.scores):
        return False
    outside = np.ones(scheme.n_entities, dtype=bool)
    outside[result.items] = False
    return not np.any(every[outside] > result.scores[-1])


def rank_queries(
    score_fn: ScoreFunction,
    probs: np.ndarray,
    scheme: HashScheme,
    params: BeamParams,
    exhaustive: bool = False,
) -> List[RankedResult]:
    """Rank every query of a ``(Q, m, hash_size)`` stack of distributions."""
    if exhaustive:
        return [exhaustive_rank(score_fn, p, scheme, params.k) for p in probs]
    return [beam_search(score_fn, p, scheme, params) for p in probs]


def format_ranked(result: RankedResult, query: int, names: Optional[Sequence[str]] = None) -> List[str]:
    """Lines ``query rank id score exact``; ``id`` becomes the entity name when ``names`` is given."""
    lines = []
    for rank, (item, score) in enumerate(zip(result.items, result.scores), start=1):
        label = names[item] if names is not None and item < len(names) else str(int(item))
        lines.append(f"{query} {rank} {label} {score:.6f} {int(result.exact)}")
    return lines
