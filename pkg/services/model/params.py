from typing import Dict, List, Tuple

import numpy as np

from schemas.config import ModelConfig
from utils.rng import SeedLike, make_rng

ModelParameters = Dict[str, np.ndarray]

TRUNCATION = 2.0

LAYER_GROUPS = (
    "query",
    "key",
    "value",
    "out",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "ln_attn.gain",
    "ln_attn.bias",
    "ln_ffn.gain",
    "ln_ffn.bias",
)


def layer_key(layer: int, group: str) -> str:
    return f"layers.{layer}.{group}"


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape in canonical order (the checkpoint array order)."""
    d, heads, d_head, d_ff = config.d, config.n_heads, config.head_dim, config.d_ff
    shapes: Dict[str, Tuple[int, ...]] = {"embedding": (config.n_tokens, d)}
    if config.use_positions:
        shapes["position"] = (config.seq_len, d)
    if not config.tie_embeddings:
        shapes["output_embedding"] = (config.n_ordinary_tokens, d)
    for layer in range(config.n_layers):
        per_layer = {
            "query": (heads, d, d_head),
            "key": (heads, d, d_head),
            "value": (heads, d, d_head),
            "out": (heads, d, d_head),
            "ffn.w1": (d, d_ff),
            "ffn.b1": (d_ff,),
            "ffn.w2": (d, d_ff),
            "ffn.b2": (d,),
            "ln_attn.gain": (d,),
            "ln_attn.bias": (d,),
            "ln_ffn.gain": (d,),
            "ln_ffn.bias": (d,),
        }
        for group in LAYER_GROUPS:
            shapes[layer_key(layer, group)] = per_layer[group]
    return shapes


def parameter_count(config: ModelConfig) -> int:
    d, d_ff = config.d, config.d_ff
    attention = 4 * config.n_heads * d * config.head_dim
    ffn = 2 * d * d_ff + d_ff + d
    norms = 4 * d
    total = config.n_tokens * d + config.n_layers * (attention + ffn + norms)
    if config.use_positions:
        total += config.seq_len * d
    if not config.tie_embeddings:
        total += config.n_ordinary_tokens * d
    return total


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) redrawn until every entry lies within two standard deviations."""
    values = rng.standard_normal(shape)
    outside = np.abs(values) > TRUNCATION
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > TRUNCATION
    return values * std


def init_params(config: ModelConfig, seed: SeedLike = 0) -> ModelParameters:
    rng = make_rng(seed)
    dtype = np.dtype(config.dtype.value)
    params: ModelParameters = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".bias", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = truncated_normal(rng, shape, config.init_std).astype(dtype)
    return params


def zeros_like(params: ModelParameters) -> ModelParameters:
    return {name: np.zeros_like(value) for name, value in params.items()}


def cast_params(params: ModelParameters, dtype) -> ModelParameters:
    return {name: value.astype(dtype) for name, value in params.items()}


def global_norm(grads: ModelParameters) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def check_shapes(params: ModelParameters, config: ModelConfig) -> List[str]:
    """Human-readable mismatches between ``params`` and ``config``; empty when consistent."""
    expected = parameter_shapes(config)
    problems = [f"missing {name}" for name in expected if name not in params]
    problems += [f"unexpected {name}" for name in params if name not in expected]
    problems += [
        f"{name}: shape {params[name].shape} != {shape}"
        for name, shape in expected.items()
        if name in params and params[name].shape != shape
    ]
    return problems
