from .losses import sample_negatives, sampled_softmax, sampled_softmax_loss
from .optim import AdamState, adam_step, clip_by_global_norm, lr_at
from .sources import CorpusExampleSource, ExampleSource, FixedExampleSource
from .trainer import FINAL_CHECKPOINT, METRICS_FILE, Trainer, TrainState, checkpoint_name, train

__all__ = [
    "AdamState",
    "CorpusExampleSource",
    "ExampleSource",
    "FINAL_CHECKPOINT",
    "FixedExampleSource",
    "METRICS_FILE",
    "TrainState",
    "Trainer",
    "adam_step",
    "checkpoint_name",
    "clip_by_global_norm",
    "lr_at",
    "sample_negatives",
    "sampled_softmax",
    "sampled_softmax_loss",
    "train",
]
