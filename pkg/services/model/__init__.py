from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import (
    ForwardResult,
    PredictionSet,
    backward,
    entity_embeddings,
    forward,
    loss,
    loss_gradient,
    value_and_grad,
)
from .params import (
    ModelParameters,
    check_shapes,
    global_norm,
    init_params,
    parameter_count,
    parameter_shapes,
    zeros_like,
)

__all__ = [
    "Checkpoint",
    "ForwardResult",
    "ModelParameters",
    "PredictionSet",
    "backward",
    "check_shapes",
    "entity_embeddings",
    "forward",
    "global_norm",
    "init_params",
    "load_checkpoint",
    "loss",
    "loss_gradient",
    "parameter_count",
    "parameter_shapes",
    "save_checkpoint",
    "value_and_grad",
    "zeros_like",
]
