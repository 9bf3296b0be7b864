from typing import Optional, Tuple

import numpy as np

from services.model.layers import log_softmax, softmax
from utils.rng import SeedLike, make_rng


def sample_negatives(rng: np.random.Generator, vocab_size: int, target: int, num_negatives: int) -> np.ndarray:
    """``num_negatives`` distinct ids drawn uniformly from the vocabulary minus ``target``."""
    draws = rng.choice(vocab_size - 1, size=num_negatives, replace=False)
    return draws + (draws >= target)


def sampled_softmax(
    logits: np.ndarray,
    targets: np.ndarray,
    num_negatives: int,
    seed: SeedLike = 0,
    n_examples: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
    """Cross-entropy over {target} plus uniform negatives, and its gradient w.r.t. ``logits``.

    ``logits`` is ``(P, V)`` over the full id space, ``targets`` is ``(P,)``. Each
    row draws its own negatives without replacement. The loss is summed over rows
    and divided by ``n_examples`` (default P), matching the full-softmax loss.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n_rows, vocab_size = logits.shape
    if num_negatives >= vocab_size:
        raise ValueError(f"num_negatives={num_negatives} must be smaller than the vocabulary ({vocab_size})")
    if targets.shape != (n_rows,):
        raise ValueError("one target per logit row is required")
    rng = make_rng(seed)
    n_examples = n_examples or n_rows

    total = 0.0
    grad = np.zeros_like(logits)
    for r in range(n_rows):
        support = np.concatenate(([targets[r]], sample_negatives(rng, vocab_size, int(targets[r]), num_negatives)))
        picked = logits[r, support].astype(np.float64)
        total -= float(log_softmax(picked)[0])
        local = softmax(picked)
        local[0] -= 1.0
        grad[r, support] = local / n_examples
    return total / n_examples, grad


def sampled_softmax_loss(logits: np.ndarray, target: int, num_negatives: int, seed: SeedLike = 0) -> float:
    value, _ = sampled_softmax(np.asarray(logits)[None, :], np.array([target]), num_negatives, seed)
    return value
