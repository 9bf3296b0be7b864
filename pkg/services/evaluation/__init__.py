from .harness import Predictions, evaluate, format_table, predict, rank_predictions, summarize, write_report
from .metrics import (
    frequency_bucket_counts,
    frequency_bucket_recall,
    frequency_deciles,
    recall_at_k,
    token_recall_at_1,
)

__all__ = [
    "Predictions",
    "evaluate",
    "format_table",
    "frequency_bucket_counts",
    "frequency_bucket_recall",
    "frequency_deciles",
    "predict",
    "rank_predictions",
    "recall_at_k",
    "summarize",
    "token_recall_at_1",
    "write_report",
]
