from typing import List, Optional, Sequence

import numpy as np

from services.inference import RankedResult

N_DECILES = 10


def recall_at_k(results: Sequence[RankedResult], truths: Sequence[int], k: int) -> float:
    """Fraction of queries whose true entity is among the first ``k`` returned items."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(results) != len(truths):
        raise ValueError(f"{len(results)} results for {len(truths)} truths")
    if not results:
        return 0.0
    hits = sum(bool(np.any(r.items[:k] == t)) for r, t in zip(results, truths))
    return hits / len(results)


def frequency_deciles(train_frequencies: np.ndarray) -> np.ndarray:
    """Decile of every entity by training frequency: 0 holds the most frequent tenth (ties by id)."""
    freq = np.asarray(train_frequencies)
    n = freq.size
    order = np.lexsort((np.arange(n), -freq))
    deciles = np.empty(n, dtype=np.int64)
    deciles[order] = (np.arange(n) * N_DECILES) // n
    return deciles


def frequency_bucket_counts(truths: Sequence[int], train_frequencies: np.ndarray) -> List[int]:
    deciles = frequency_deciles(train_frequencies)[np.asarray(truths, dtype=np.int64)]
    return np.bincount(deciles, minlength=N_DECILES).tolist()


def frequency_bucket_recall(
    results: Sequence[RankedResult], truths: Sequence[int], train_frequencies: np.ndarray
) -> List[Optional[float]]:
    """Mean rec@1 per frequency decile; a decile with no queries is None."""
    truths = np.asarray(truths, dtype=np.int64)
    if truths.size and truths.max() >= len(train_frequencies):
        raise ValueError("train_frequencies do not cover every truth")
    deciles = frequency_deciles(train_frequencies)[truths]
    hits = np.array([r.items.size > 0 and r.items[0] == t for r, t in zip(results, truths)], dtype=bool)
    buckets: List[Optional[float]] = []
    for decile in range(N_DECILES):
        members = deciles == decile
        buckets.append(float(hits[members].mean()) if members.any() else None)
    return buckets


def token_recall_at_1(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over hash functions of the argmax accuracy of p_j against the true token.

    ``predictions`` is ``(P, m, hash_size)`` (probabilities or logits), ``targets`` ``(P, m)``.
    """
    predictions = np.asarray(predictions)
    targets = np.asarray(targets, dtype=np.int64)
    if predictions.shape[:2] != targets.shape:
        raise ValueError(f"predictions {predictions.shape} and targets {targets.shape} disagree")
    if targets.size == 0:
        return 0.0
    return float(np.mean(np.argmax(predictions, axis=-1) == targets))
