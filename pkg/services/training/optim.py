import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from schemas.config import TrainConfig
from services.model import ModelParameters, global_norm, zeros_like
from utils.errors import DivergenceError


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup to ``init_lr`` at ``warmup_steps``, then inverse square-root decay."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    warmup = config.warmup_steps
    return config.init_lr * min(step / warmup, math.sqrt(warmup / max(step, 1)))


@dataclass
class AdamState:
    step: int
    params: ModelParameters
    first: ModelParameters
    second: ModelParameters

    @classmethod
    def initial(cls, params: ModelParameters) -> "AdamState":
        return cls(step=0, params=params, first=zeros_like(params), second=zeros_like(params))


def adam_step(
    state: AdamState,
    grads: ModelParameters,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update; returns a new state and leaves ``state`` untouched."""
    for name, grad in grads.items():
        if name not in state.params or grad.shape != state.params[name].shape:
            raise ValueError(f"gradient {name} does not match the parameters")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}, step {state.step + 1} aborted")

    t = state.step + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    params, first, second = {}, {}, {}
    for name, value in state.params.items():
        grad = grads[name]
        first[name] = beta1 * state.first[name] + (1.0 - beta1) * grad
        second[name] = beta2 * state.second[name] + (1.0 - beta2) * grad * grad
        update = lr * (first[name] / correction1) / (np.sqrt(second[name] / correction2) + epsilon)
        params[name] = (value - update).astype(value.dtype)
        first[name] = first[name].astype(value.dtype)
        second[name] = second[name].astype(value.dtype)
    return AdamState(step=t, params=params, first=first, second=second)


def clip_by_global_norm(grads: ModelParameters, max_norm: Optional[float]) -> Tuple[ModelParameters, float]:
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise DivergenceError("non-finite gradient norm")
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}, norm
