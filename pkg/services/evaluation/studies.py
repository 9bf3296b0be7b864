"""Desk-scale experiment harnesses: beam widths, depth vs hashing, random vs coherent hashing."""

from typing import Optional, Sequence

import numpy as np

from schemas.config import InferConfig, RunConfig
from schemas.reports import (
    BeamSweepReport,
    BeamSweepRow,
    DepthRun,
    DepthStudyReport,
    HashComparisonReport,
    HashVariantResult,
)
from services.corpus import MaskedExample, Page, entity_frequencies, make_eval_set
from services.hashing import HashScheme, VocabSpec, build_coherent_scheme, build_random_scheme
from services.model import Checkpoint, entity_embeddings
from services.training import train
from utils.log import logger

from .harness import evaluate, predict, rank_predictions, summarize

BEAM_WIDTHS = (1, 10, 20, 100)
RECALL_KS = (1, 10, 20)
HASH_VARIANTS = ("random+random", "random+coherent", "coherent+coherent")


def beam_width_sweep(
    checkpoint: Checkpoint,
    scheme: HashScheme,
    examples: Sequence[MaskedExample],
    infer_config: InferConfig,
    widths: Sequence[int] = BEAM_WIDTHS,
    ks: Sequence[int] = RECALL_KS,
    fingerprint: str = "",
) -> BeamSweepReport:
    """rec@k at each beam width with a single beam iteration; predictions are computed once."""
    predictions = predict(checkpoint.params, checkpoint.config, scheme, examples)
    one_step = infer_config.model_copy(update={"iters": 1})
    report = BeamSweepReport(n_examples=len(predictions), fingerprint=fingerprint)
    for width in widths:
        results = rank_predictions(predictions, scheme, one_step, k=max(ks), beam=width)
        summary = summarize(results, predictions, ks)
        report.rows.append(
            BeamSweepRow(
                beam=width,
                recall=summary.recall,
                exact_fraction=summary.exact_fraction,
                mean_candidates=summary.mean_candidates,
            )
        )
        logger.info(f"beam={width}: " + " ".join(f"rec@{k}={v:.4f}" for k, v in summary.recall.items()))
    return report


def unhashed_scheme(n_entities: int, specials: Sequence[str], seed: int) -> HashScheme:
    """One function with alpha=1: every entity owns its token."""
    return build_random_scheme(VocabSpec(n_entities, tuple(specials)), m=1, alpha=1, seed=seed)


def _variant_config(config: RunConfig, seed: int, n_layers: Optional[int] = None) -> RunConfig:
    run = config.model_copy(deep=True)
    run.train.seed = seed
    run.train.eval_every = 0
    run.train.checkpoint_every = 0
    if n_layers is not None:
        run.model.n_layers = n_layers
    return run


def _fit_and_score(config: RunConfig, scheme: HashScheme, train_pages, test_pages, seed: int):
    examples = make_eval_set(test_pages, scheme, config.model.seq_len, seed)
    if config.eval.max_examples:
        examples = examples[: config.eval.max_examples]
    trainer = train(config, scheme, train_pages)
    report = evaluate(trainer.state.params, trainer.model_config, scheme, examples, config.infer, ks=(1,))
    final_loss = float(np.mean(trainer.state.losses[-50:])) if trainer.state.losses else float("nan")
    return report, final_loss


def depth_study(
    train_pages: Sequence[Page],
    test_pages: Sequence[Page],
    n_entities: int,
    config: RunConfig,
    depths: Optional[Sequence[int]] = None,
    seeds: Optional[Sequence[int]] = None,
) -> DepthStudyReport:
    """Train unhashed and hashed models at each depth with matched settings and report rec@1."""
    depths = list(depths or config.eval.depths)
    seeds = list(seeds if seeds is not None else config.eval.seeds)
    report = DepthStudyReport()
    for seed in seeds:
        schemes = {
            False: unhashed_scheme(n_entities, config.scheme.specials, seed),
            True: build_random_scheme(
                VocabSpec(n_entities, tuple(config.scheme.specials)),
                config.scheme.m,
                config.scheme.alpha,
                seed,
                config.scheme.require_unique_digests,
            ),
        }
        for hashed, scheme in schemes.items():
            for depth in depths:
                run = _variant_config(config, seed, n_layers=depth)
                evaluation, final_loss = _fit_and_score(run, scheme, train_pages, test_pages, seed)
                report.runs.append(
                    DepthRun(hashed=hashed, n_layers=depth, seed=seed, rec1=evaluation.recall[1], final_loss=final_loss)
                )
                logger.info(f"depth study seed={seed} hashed={hashed} L={depth}: rec@1={evaluation.recall[1]:.4f}")
    return report


def pretrain_entity_embeddings(
    train_pages: Sequence[Page], n_entities: int, config: RunConfig, steps: Optional[int] = None, seed: int = 0
) -> np.ndarray:
    """Output embeddings of a short unhashed run, one row per entity."""
    run = _variant_config(config, seed)
    run.train.total_steps = steps or config.eval.pretrain_steps
    scheme = unhashed_scheme(n_entities, config.scheme.specials, seed)
    trainer = train(run, scheme, train_pages)
    return entity_embeddings(trainer.state.params, scheme)


def build_variant_scheme(
    variant: str,
    n_entities: int,
    alpha: int,
    specials: Sequence[str],
    embeddings: np.ndarray,
    frequencies: np.ndarray,
    seed: int,
    require_unique_digests: bool = True,
) -> HashScheme:
    """Two-function scheme mixing random and coherent hashing; the second function avoids the first's buckets."""
    spec = VocabSpec(n_entities, tuple(specials))
    if variant == "random+random":
        return build_random_scheme(spec, 2, alpha, seed, require_unique_digests)
    if variant == "random+coherent":
        first = build_random_scheme(spec, 1, alpha, seed, require_unique_digests=False).functions[0]
    elif variant == "coherent+coherent":
        first = build_coherent_scheme(embeddings, frequencies, alpha)
    else:
        raise ValueError(f"unknown hashing variant {variant!r}; choose from {HASH_VARIANTS}")
    second = build_coherent_scheme(embeddings, frequencies, alpha, constraint=first.forward)
    return HashScheme.from_functions([first, second], alpha, specials, require_unique_digests)


def hashing_comparison(
    train_pages: Sequence[Page],
    test_pages: Sequence[Page],
    n_entities: int,
    config: RunConfig,
    alpha: int,
    embeddings: Optional[np.ndarray] = None,
    seed: int = 0,
    variants: Sequence[str] = HASH_VARIANTS,
) -> HashComparisonReport:
    """Matched training runs per hashing variant; token rec@1 and entity rec@1 for each."""
    frequencies = entity_frequencies(train_pages, n_entities)
    if embeddings is None:
        embeddings = pretrain_entity_embeddings(train_pages, n_entities, config, seed=seed)
    report = HashComparisonReport(alpha=alpha, seed=seed)
    for variant in variants:
        scheme = build_variant_scheme(
            variant,
            n_entities,
            alpha,
            config.scheme.specials,
            embeddings,
            frequencies,
            seed,
            config.scheme.require_unique_digests,
        )
        run = _variant_config(config, seed)
        run.scheme.m, run.scheme.alpha = 2, alpha
        evaluation, _ = _fit_and_score(run, scheme, train_pages, test_pages, seed)
        report.variants[variant] = HashVariantResult(token_rec1=evaluation.token_rec1, entity_rec1=evaluation.recall[1])
        logger.info(
            f"hashing {variant} alpha={alpha} seed={seed}: token rec@1={evaluation.token_rec1:.4f} "
            f"entity rec@1={evaluation.recall[1]:.4f}"
        )
    return report
