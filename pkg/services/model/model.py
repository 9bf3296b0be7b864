"""Transformer over Bloom digests with per-function softmax outputs.

A batch is ``tokens`` of shape ``(B, m * n)`` laid out [i][j]; row ``r`` of a
prediction set names ``(example, entity position)`` and carries one logit
vector of length hash_size for each of the m hash functions.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from schemas.config import ModelConfig
from utils.errors import DivergenceError

from .layers import (
    attention_backward,
    attention_forward,
    ffn_backward,
    ffn_forward,
    layer_norm_backward,
    layer_norm_forward,
    log_softmax,
    softmax,
)
from .params import LAYER_GROUPS, ModelParameters, layer_key, zeros_like


@dataclass
class PredictionSet:
    logits: np.ndarray  # (P, m, hash_size)
    rows: np.ndarray  # (P, 2): example index, entity position
    n_examples: int
    _probs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def probs(self) -> np.ndarray:
        if self._probs is None:
            self._probs = softmax(self.logits.astype(np.float64), axis=-1)
        return self._probs

    def position(self, r: int) -> np.ndarray:
        """The m distributions p_{i,1..m} of prediction row ``r``."""
        return self.probs[r]

    def __len__(self) -> int:
        return self.logits.shape[0]


@dataclass
class ForwardResult:
    hidden: np.ndarray  # (B, m * n, d) final embeddings y_{i,j}
    predictions: PredictionSet
    cache: dict = field(repr=False)


def _as_batch(tokens: np.ndarray, valid: Optional[np.ndarray]):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
        valid = None if valid is None else np.asarray(valid, dtype=bool)[None, :]
    if valid is None:
        valid = np.ones(tokens.shape, dtype=bool)
    return tokens, np.asarray(valid, dtype=bool)


def _all_rows(valid: np.ndarray, m: int) -> np.ndarray:
    b, t = np.nonzero(valid[:, ::m])
    return np.stack([b, t], axis=1).astype(np.int64)


def _layer_params(params: ModelParameters, layer: int) -> Dict[str, np.ndarray]:
    return {group: params[layer_key(layer, group)] for group in LAYER_GROUPS}


def _output_blocks(params: ModelParameters, config: ModelConfig) -> np.ndarray:
    table = params["embedding"][: config.n_ordinary_tokens] if config.tie_embeddings else params["output_embedding"]
    return table.reshape(config.m, config.hash_size, config.d)


def forward(
    params: ModelParameters,
    config: ModelConfig,
    tokens: np.ndarray,
    valid: Optional[np.ndarray] = None,
    rows: Optional[np.ndarray] = None,
) -> ForwardResult:
    """Run the model on one digest ``(m * n,)`` or a batch ``(B, m * n)``.

    ``rows`` selects the positions to predict; by default every valid entity
    position of every example.
    """
    m = config.m
    tokens, valid = _as_batch(tokens, valid)
    if tokens.shape[1] % m:
        raise ValueError(f"digest length {tokens.shape[1]} is not a multiple of m={m}")
    if tokens.min() < 0 or tokens.max() >= config.n_tokens:
        raise ValueError(f"token ids must lie in [0, {config.n_tokens})")
    n_positions = tokens.shape[1] // m
    if n_positions > config.seq_len and config.use_positions:
        raise ValueError(f"{n_positions} positions exceed seq_len={config.seq_len}")
    rows = _all_rows(valid, m) if rows is None else np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    positions = np.arange(tokens.shape[1]) // m
    x = params["embedding"][tokens]
    if config.use_positions:
        x = x + params["position"][positions][None, :, :]

    layer_caches: List[tuple] = []
    for layer in range(config.n_layers):
        p = _layer_params(params, layer)
        attended, attn_cache = attention_forward(x, p["query"], p["key"], p["value"], p["out"], key_mask=valid)
        h, ln_attn_cache = layer_norm_forward(x + attended, p["ln_attn.gain"], p["ln_attn.bias"], config.layer_norm_eps)
        fed, ffn_cache = ffn_forward(h, p["ffn.w1"], p["ffn.b1"], p["ffn.w2"], p["ffn.b2"])
        x, ln_ffn_cache = layer_norm_forward(h + fed, p["ln_ffn.gain"], p["ln_ffn.bias"], config.layer_norm_eps)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite activation after layer {layer}")
        layer_caches.append((attn_cache, ln_attn_cache, ffn_cache, ln_ffn_cache))

    slots = rows[:, 1:2] * m + np.arange(m)[None, :]
    outputs = x[rows[:, 0:1], slots]  # (P, m, d)
    logits = np.einsum("pjd,jhd->pjh", outputs, _output_blocks(params, config))
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite output logits")

    predictions = PredictionSet(logits=logits, rows=rows, n_examples=tokens.shape[0])
    cache = {"tokens": tokens, "positions": positions, "layers": layer_caches, "outputs": outputs, "slots": slots}
    return ForwardResult(hidden=x, predictions=predictions, cache=cache)


def _check_targets(prediction: PredictionSet, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != prediction.logits.shape[:2]:
        raise ValueError(f"targets shape {targets.shape} does not match predictions {prediction.logits.shape[:2]}")
    if targets.size and (targets.min() < 0 or targets.max() >= prediction.logits.shape[2]):
        raise ValueError(f"target tokens must lie in [0, {prediction.logits.shape[2]})")
    return targets


def loss(prediction: PredictionSet, targets: np.ndarray) -> float:
    """Sum over masked positions and hash functions of -log p[target], averaged over examples."""
    targets = _check_targets(prediction, targets)
    log_probs = log_softmax(prediction.logits.astype(np.float64), axis=-1)
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)
    value = -float(picked.sum()) / prediction.n_examples
    if not np.isfinite(value):
        raise DivergenceError("non-finite loss")
    return value


def loss_gradient(prediction: PredictionSet, targets: np.ndarray) -> np.ndarray:
    """d loss / d logits for :func:`loss`."""
    targets = _check_targets(prediction, targets)
    grad = prediction.probs.copy()
    rows, funcs = np.indices(targets.shape)
    grad[rows, funcs, targets] -= 1.0
    return (grad / prediction.n_examples).astype(prediction.logits.dtype)


def backward(params: ModelParameters, config: ModelConfig, result: ForwardResult, d_logits: np.ndarray) -> ModelParameters:
    """Gradients of every parameter given the gradient of the output logits."""
    m = config.m
    cache = result.cache
    rows = result.predictions.rows
    grads = zeros_like(params)
    d_logits = np.asarray(d_logits, dtype=result.hidden.dtype)

    blocks = _output_blocks(params, config)
    d_outputs = np.einsum("pjh,jhd->pjd", d_logits, blocks)
    d_blocks = np.einsum("pjh,pjd->jhd", d_logits, cache["outputs"]).reshape(-1, config.d)
    if config.tie_embeddings:
        grads["embedding"][: config.n_ordinary_tokens] += d_blocks
    else:
        grads["output_embedding"] += d_blocks

    dx = np.zeros_like(result.hidden)
    np.add.at(dx, (np.repeat(rows[:, 0], m), cache["slots"].reshape(-1)), d_outputs.reshape(-1, config.d))

    for layer in reversed(range(config.n_layers)):
        p = _layer_params(params, layer)
        g = {}
        attn_cache, ln_attn_cache, ffn_cache, ln_ffn_cache = cache["layers"][layer]

        d_sum, g["ln_ffn.gain"], g["ln_ffn.bias"] = layer_norm_backward(dx, ln_ffn_cache)
        d_h, g["ffn.w1"], g["ffn.b1"], g["ffn.w2"], g["ffn.b2"] = ffn_backward(d_sum, ffn_cache, p["ffn.w1"], p["ffn.w2"])
        d_h = d_h + d_sum

        d_sum, g["ln_attn.gain"], g["ln_attn.bias"] = layer_norm_backward(d_h, ln_attn_cache)
        d_x, g["query"], g["key"], g["value"], g["out"] = attention_backward(
            d_sum, attn_cache, p["query"], p["key"], p["value"], p["out"]
        )
        dx = d_x + d_sum
        for group, value in g.items():
            grads[layer_key(layer, group)] = value

    np.add.at(grads["embedding"], cache["tokens"].reshape(-1), dx.reshape(-1, config.d))
    if config.use_positions:
        np.add.at(grads["position"], cache["positions"], dx.sum(axis=0))

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}")
    return grads


def value_and_grad(params: ModelParameters, config: ModelConfig, tokens, valid, rows, targets):
    """Forward, loss and backward in one call; returns (loss, grads, forward result)."""
    result = forward(params, config, tokens, valid, rows)
    value = loss(result.predictions, targets)
    grads = backward(params, config, result, loss_gradient(result.predictions, targets))
    return value, grads, result


def entity_embeddings(params: ModelParameters, scheme) -> np.ndarray:
    """Output embedding of every entity under an unhashed scheme (m=1, alpha=1), row = entity id."""
    if scheme.m != 1 or scheme.alpha != 1:
        raise ValueError(f"entity embeddings need an unhashed scheme, got m={scheme.m} alpha={scheme.alpha}")
    table = params.get("output_embedding", params["embedding"])
    return np.asarray(table[scheme.forward[0]], dtype=np.float64)
