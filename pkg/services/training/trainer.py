import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from schemas.config import InferConfig, LossMode, ModelConfig, RunConfig, TrainConfig
from schemas.reports import EvalReport
from services.corpus import MaskedExample, Page, collate
from services.evaluation.harness import evaluate
from services.hashing import HashScheme, scheme_fingerprint
from services.model import (
    Checkpoint,
    ModelParameters,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    loss_gradient,
    save_checkpoint,
)
from utils.errors import ArtifactError, ConfigError
from utils.log import logger
from utils.rng import derive_seed

from .losses import sampled_softmax
from .optim import AdamState, adam_step, clip_by_global_norm, lr_at
from .sources import CorpusExampleSource, ExampleSource

METRICS_FILE = "metrics.log"
FINAL_CHECKPOINT = "model.sbck"


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:07d}.sbck"


@dataclass
class TrainState:
    adam: AdamState
    rng: np.random.Generator
    losses: List[float] = field(default_factory=list)

    @property
    def step(self) -> int:
        return self.adam.step

    @property
    def params(self) -> ModelParameters:
        return self.adam.params


class Trainer:
    """Owns the training state and runs optimisation steps over an example source.

    With ``out_dir`` set, evaluation records go to an append-only ``metrics.log``
    and checkpoints are written every ``checkpoint_every`` steps plus once at the end.
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        scheme: HashScheme,
        source: ExampleSource,
        eval_examples: Optional[Sequence[MaskedExample]] = None,
        infer_config: Optional[InferConfig] = None,
        out_dir: Optional[str] = None,
        frequencies: Optional[np.ndarray] = None,
    ):
        if (model_config.m, model_config.hash_size, model_config.n_specials) != (scheme.m, scheme.hash_size, len(scheme.specials)):
            raise ConfigError(f"model vocabulary layout does not match {scheme!r}")
        if train_config.loss_mode == LossMode.sampled_softmax:
            if scheme.m != 1 or scheme.alpha != 1:
                raise ConfigError("sampled_softmax training needs an unhashed scheme (m=1, alpha=1)")
            if train_config.num_negatives >= scheme.hash_size:
                raise ConfigError(f"num_negatives={train_config.num_negatives} must be below the vocabulary size {scheme.hash_size}")
        self.model_config = model_config
        self.config = train_config
        self.scheme = scheme
        self.scheme_fingerprint = scheme_fingerprint(scheme)
        self.source = source
        self.eval_examples = list(eval_examples or [])
        self.infer_config = infer_config or InferConfig()
        self.out_dir = out_dir
        self.frequencies = frequencies
        self.state = TrainState(
            adam=AdamState.initial(init_params(model_config, derive_seed(train_config.seed or 0, 0))),
            rng=np.random.default_rng(derive_seed(train_config.seed or 0, 1)),
        )
        self.history: List[Dict[str, float]] = []

    def train_step(self) -> float:
        step = self.state.step
        batch = collate(self.source.examples(step, self.config.batch_size), self.scheme, self.model_config.seq_len)
        result = forward(self.state.params, self.model_config, batch.tokens, batch.valid, batch.rows)

        if self.config.loss_mode == LossMode.sampled_softmax:
            value, d_flat = sampled_softmax(
                result.predictions.logits[:, 0, :],
                batch.targets[:, 0],
                self.config.num_negatives,
                self.state.rng,
                n_examples=batch.n_examples,
            )
            d_logits = d_flat[:, None, :]
        else:
            value = loss(result.predictions, batch.targets)
            d_logits = loss_gradient(result.predictions, batch.targets)

        grads = backward(self.state.params, self.model_config, result, d_logits)
        grads, norm = clip_by_global_norm(grads, self.config.clip_norm)
        lr = lr_at(self.config, step + 1)
        self.state.adam = adam_step(self.state.adam, grads, lr, self.config.beta1, self.config.beta2, self.config.epsilon)
        self.state.losses.append(value)
        logger.debug(f"step={step + 1} loss={value:.6f} grad_norm={norm:.4f} lr={lr:.3e}")
        return value

    def evaluate(self) -> Optional[EvalReport]:
        if not self.eval_examples:
            return None
        return evaluate(
            self.state.params,
            self.model_config,
            self.scheme,
            self.eval_examples,
            self.infer_config,
            frequencies=self.frequencies,
        )

    def _record(self, window: List[float]) -> None:
        record: Dict[str, float] = {"step": self.state.step, "loss": float(np.mean(window)) if window else float("nan")}
        report = self.evaluate()
        if report is not None:
            record.update({f"rec@{k}": v for k, v in report.recall.items()})
        self.history.append(record)
        line = " ".join(f"{key}={value}" if key == "step" else f"{key}={value:.6f}" for key, value in record.items())
        logger.info(line)
        if self.out_dir:
            try:
                os.makedirs(self.out_dir, exist_ok=True)
                with open(os.path.join(self.out_dir, METRICS_FILE), "a", encoding="utf-8") as f:
                    f.write(line + "\n")
            except OSError as e:
                raise ArtifactError(f"cannot append metrics: {e}") from e

    def run(self, total_steps: Optional[int] = None, progress: bool = False) -> List[float]:
        """Train until ``total_steps`` (default: the configured total); returns the losses of this call."""
        total = self.config.total_steps if total_steps is None else total_steps
        start = self.state.step
        window: List[float] = []
        losses: List[float] = []
        for _ in tqdm(range(start, total), disable=not progress, desc="train", initial=start, total=total):
            value = self.train_step()
            losses.append(value)
            window.append(value)
            step = self.state.step
            if self.config.eval_every and step % self.config.eval_every == 0:
                self._record(window)
                window = []
            if self.out_dir and self.config.checkpoint_every and step % self.config.checkpoint_every == 0:
                self.save(os.path.join(self.out_dir, checkpoint_name(step)))
        if self.out_dir and total > start:
            self.save(os.path.join(self.out_dir, FINAL_CHECKPOINT))
        return losses

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.state.params,
            config=self.model_config,
            scheme_fingerprint=self.scheme_fingerprint,
            step=self.state.step,
            first_moments=self.state.adam.first,
            second_moments=self.state.adam.second,
            rng_state=self.state.rng.bit_generator.state,
            metadata={"train": self.config.model_dump(mode="json")},
        )

    def save(self, path: str) -> None:
        save_checkpoint(path, self.checkpoint())

    def resume(self, path: str) -> None:
        """Continue from a checkpoint: parameters, moments, step and sampler state."""
        checkpoint = load_checkpoint(path, self.scheme)
        if checkpoint.config != self.model_config:
            raise ConfigError(f"{path} holds a model with a different configuration")
        if not checkpoint.has_optimizer_state:
            raise ArtifactError(f"{path} has no optimizer state to resume from")
        self.state.adam = AdamState(
            step=checkpoint.step,
            params=checkpoint.params,
            first=checkpoint.first_moments,
            second=checkpoint.second_moments,
        )
        if checkpoint.rng_state:
            self.state.rng.bit_generator.state = checkpoint.rng_state
        logger.info(f"resumed from {path} at step {checkpoint.step}")


def train(
    config: RunConfig,
    scheme: HashScheme,
    pages: Sequence[Page],
    eval_examples: Optional[Sequence[MaskedExample]] = None,
    out_dir: Optional[str] = None,
    frequencies: Optional[np.ndarray] = None,
    resume_from: Optional[str] = None,
    progress: bool = False,
) -> Trainer:
    """Train a model on corpus pages under ``config``; returns the finished trainer."""
    model_config = ModelConfig.from_scheme(config.model, scheme)
    source = CorpusExampleSource(pages, scheme, model_config.seq_len, config.train.mask_rate, config.train.seed)
    trainer = Trainer(model_config, config.train, scheme, source, eval_examples, config.infer, out_dir, frequencies)
    if resume_from:
        trainer.resume(resume_from)
    logger.info(f"training {config.train.total_steps - trainer.state.step} steps, N={scheme.n_entities} {scheme!r}")
    trainer.run(progress=progress)
    return trainer
