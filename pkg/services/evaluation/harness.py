import os
from dataclasses import dataclass
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from schemas.config import InferConfig, ModelConfig
from schemas.reports import EvalReport
from services.corpus import MaskedExample, collate
from services.hashing import HashScheme
from services.inference import BeamParams, RankedResult, get_score_function, rank_queries
from services.model import ModelParameters, forward
from utils.errors import ArtifactError
from utils.log import logger

from .metrics import frequency_bucket_counts, frequency_bucket_recall, recall_at_k, token_recall_at_1

EVAL_BATCH_SIZE = 64


@dataclass
class Predictions:
    probs: np.ndarray  # (P, m, hash_size)
    targets: np.ndarray  # (P, m)
    truths: np.ndarray  # (P,)

    def __len__(self) -> int:
        return self.truths.size


def predict(
    params: ModelParameters,
    config: ModelConfig,
    scheme: HashScheme,
    examples: Sequence[MaskedExample],
    batch_size: int = EVAL_BATCH_SIZE,
) -> Predictions:
    """Distributions at every target position of ``examples``, in example order."""
    probs, targets, truths = [], [], []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        batch = collate(chunk, scheme, max(e.n_positions for e in chunk))
        result = forward(params, config, batch.tokens, batch.valid, batch.rows)
        probs.append(result.predictions.probs)
        targets.append(batch.targets)
        truths.append(batch.original_ids)
    if not probs:
        empty = np.zeros((0, scheme.m, scheme.hash_size))
        return Predictions(empty, np.zeros((0, scheme.m), dtype=np.int64), np.zeros(0, dtype=np.int64))
    return Predictions(np.concatenate(probs), np.concatenate(targets), np.concatenate(truths))


def rank_predictions(
    predictions: Predictions,
    scheme: HashScheme,
    infer_config: InferConfig,
    k: Optional[int] = None,
    beam: Optional[int] = None,
    exhaustive: bool = False,
) -> List[RankedResult]:
    k = min(k or infer_config.k, scheme.n_entities)
    params = BeamParams(beam=beam or infer_config.beam, iters=infer_config.iters or None, k=k)
    return rank_queries(get_score_function(infer_config.score_fn), predictions.probs, scheme, params, exhaustive)


def summarize(
    results: Sequence[RankedResult],
    predictions: Predictions,
    ks: Iterable[int],
    frequencies: Optional[np.ndarray] = None,
    fingerprint: str = "",
) -> EvalReport:
    truths = predictions.truths.tolist()
    report = EvalReport(
        recall={k: recall_at_k(results, truths, k) for k in sorted(set(ks))},
        token_rec1=token_recall_at_1(predictions.probs, predictions.targets),
        n_examples=len(results),
        exact_fraction=float(np.mean([r.exact for r in results])) if results else 0.0,
        mean_candidates=float(np.mean([r.candidates_scored for r in results])) if results else 0.0,
        fingerprint=fingerprint,
    )
    if frequencies is not None:
        report.decile_rec1 = frequency_bucket_recall(results, truths, frequencies)
        report.decile_counts = frequency_bucket_counts(truths, frequencies)
    return report


def evaluate(
    params: ModelParameters,
    config: ModelConfig,
    scheme: HashScheme,
    examples: Sequence[MaskedExample],
    infer_config: InferConfig,
    frequencies: Optional[np.ndarray] = None,
    ks: Sequence[int] = (1, 10, 20),
    fingerprint: str = "",
    exhaustive: bool = False,
) -> EvalReport:
    """rec@k, token rec@1 and frequency-decile rec@1 over held-out examples."""
    predictions = predict(params, config, scheme, examples)
    results = rank_predictions(predictions, scheme, infer_config, k=max(max(ks), infer_config.k), exhaustive=exhaustive)
    report = summarize(results, predictions, ks, frequencies, fingerprint)
    logger.info(
        f"evaluated {report.n_examples} queries: "
        + " ".join(f"rec@{k}={v:.4f}" for k, v in report.recall.items())
        + f" token_rec@1={report.token_rec1:.4f} exact={report.exact_fraction:.3f}"
    )
    return report


def flatten(value: Any, prefix: str = "") -> List[Tuple[str, str]]:
    if isinstance(value, BaseModel):
        value = value.model_dump()
    if isinstance(value, dict):
        pairs = []
        for key, item in value.items():
            pairs.extend(flatten(item, f"{prefix}{key}."))
        return pairs
    if isinstance(value, (list, tuple)):
        pairs = []
        for index, item in enumerate(value):
            pairs.extend(flatten(item, f"{prefix}{index}."))
        return pairs
    if isinstance(value, float):
        text = f"{value:.6f}"
    elif value is None:
        text = "-"
    else:
        text = str(value)
    return [(prefix.rstrip("."), text)]


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[str(h) for h in headers]] + [[f"{c:.4f}" if isinstance(c, float) else str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = ["  ".join(cell.rjust(width) for cell, width in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_report(report: BaseModel, out_dir: str, name: str = "eval", table: Optional[str] = None) -> Tuple[str, str]:
    """Write ``<name>.txt`` (aligned table) and ``<name>.kv`` (one ``key=value`` per line)."""
    pairs = flatten(report)
    table = table or format_table(["metric", "value"], pairs)
    table_path = os.path.join(out_dir, f"{name}.txt")
    kv_path = os.path.join(out_dir, f"{name}.kv")
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(table_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(table)
        with open(kv_path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(f"{key}={text}\n" for key, text in pairs)
    except OSError as e:
        raise ArtifactError(f"cannot write report to {out_dir}: {e}") from e
    logger.info(f"report written to {table_path}")
    return table_path, kv_path
