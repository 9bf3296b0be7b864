"""Forward and backward passes of the transformer building blocks.

Activations are batched as ``(B, T, d)``. Each ``*_forward`` returns its output
and a cache tuple; the matching ``*_backward`` takes the upstream gradient and
that cache and returns the input gradient followed by parameter gradients.
"""

import math
from typing import Optional, Tuple

import numpy as np


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> Tuple[np.ndarray, tuple]:
    mean = x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    normalized = (x - mean) * inv_std
    return gain * normalized + bias, (normalized, inv_std, gain)


def layer_norm_backward(grad: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    normalized, inv_std, gain = cache
    d_norm = grad * gain
    dx = inv_std * (
        d_norm
        - d_norm.mean(axis=-1, keepdims=True)
        - normalized * (d_norm * normalized).mean(axis=-1, keepdims=True)
    )
    return dx, (grad * normalized).sum(axis=(0, 1)), grad.sum(axis=(0, 1))


def attention_forward(
    x: np.ndarray,
    query: np.ndarray,
    key: np.ndarray,
    value: np.ndarray,
    out: np.ndarray,
    key_mask: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, tuple]:
    """Sum over heads a of softmax(X Q_a (X K_a)^T / sqrt(d_A)) X V_a W_a^T.

    Weights are stacked per head: ``query[a]`` is ``d x d_A`` and so are ``key``,
    ``value`` and ``out``. Keys where ``key_mask`` is False get zero weight.
    """
    scale = 1.0 / math.sqrt(query.shape[-1])
    q = np.einsum("btd,ade->bate", x, query)
    k = np.einsum("btd,ade->bate", x, key)
    v = np.einsum("btd,ade->bate", x, value)
    scores = np.einsum("bate,base->bats", q, k) * scale
    if key_mask is not None:
        scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    weights = softmax(scores, axis=-1)
    heads = np.einsum("bats,base->bate", weights, v)
    result = np.einsum("bate,ade->btd", heads, out)
    return result, (x, q, k, v, weights, heads, scale)


def attention_backward(
    grad: np.ndarray, cache: tuple, query: np.ndarray, key: np.ndarray, value: np.ndarray, out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x, q, k, v, weights, heads, scale = cache
    d_out = np.einsum("bate,btd->ade", heads, grad)
    d_heads = np.einsum("btd,ade->bate", grad, out)
    d_weights = np.einsum("bate,base->bats", d_heads, v)
    dv = np.einsum("bats,bate->base", weights, d_heads)
    # Masked keys carry zero weight, so their score gradient vanishes too.
    d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True)) * scale
    dq = np.einsum("bats,base->bate", d_scores, k)
    dk = np.einsum("bats,bate->base", d_scores, q)
    d_query = np.einsum("btd,bate->ade", x, dq)
    d_key = np.einsum("btd,bate->ade", x, dk)
    d_value = np.einsum("btd,bate->ade", x, dv)
    dx = (
        np.einsum("bate,ade->btd", dq, query)
        + np.einsum("bate,ade->btd", dk, key)
        + np.einsum("bate,ade->btd", dv, value)
    )
    return dx, d_query, d_key, d_value, d_out


def ffn_forward(x: np.ndarray, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """ReLU(X U_1 + b_1) U_2^T + b_2 with both U matrices stored as d x d_F."""
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0)
    return hidden @ w2.T + b2, (x, pre, hidden)


def ffn_backward(grad: np.ndarray, cache: tuple, w1: np.ndarray, w2: np.ndarray):
    x, pre, hidden = cache
    d_w2 = np.einsum("btd,btf->df", grad, hidden)
    d_b2 = grad.sum(axis=(0, 1))
    d_pre = (grad @ w2) * (pre > 0)
    d_w1 = np.einsum("btd,btf->df", x, d_pre)
    d_b1 = d_pre.sum(axis=(0, 1))
    return d_pre @ w1.T, d_w1, d_b1, d_w2, d_b2
