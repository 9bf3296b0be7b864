from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class EvalReport(BaseModel):
    recall: Dict[int, float] = {}  # k -> rec@k
    token_rec1: float = 0.0
    decile_rec1: List[Optional[float]] = Field(default_factory=lambda: [None] * 10)
    decile_counts: List[int] = Field(default_factory=lambda: [0] * 10)
    n_examples: int = 0
    exact_fraction: float = 0.0
    mean_candidates: float = 0.0
    fingerprint: str = ""

    def rec(self, k: int) -> float:
        return self.recall[k]


class BeamSweepRow(BaseModel):
    beam: int
    recall: Dict[int, float]
    exact_fraction: float
    mean_candidates: float


class BeamSweepReport(BaseModel):
    rows: List[BeamSweepRow] = []
    n_examples: int = 0
    fingerprint: str = ""

    def recall(self, beam: int, k: int) -> float:
        for row in self.rows:
            if row.beam == beam:
                return row.recall[k]
        raise KeyError(f"beam width {beam} not in the sweep")


class DepthRun(BaseModel):
    hashed: bool
    n_layers: int
    seed: int
    rec1: float
    final_loss: float


class DepthStudyReport(BaseModel):
    runs: List[DepthRun] = []
    fingerprint: str = ""

    def rec1(self, hashed: bool, n_layers: int, seed: int) -> float:
        for run in self.runs:
            if (run.hashed, run.n_layers, run.seed) == (hashed, n_layers, seed):
                return run.rec1
        raise KeyError(f"no run hashed={hashed} n_layers={n_layers} seed={seed}")

    def depth_gap(self, hashed: bool, shallow: int, deep: int, seed: int) -> float:
        return self.rec1(hashed, deep, seed) - self.rec1(hashed, shallow, seed)


class HashVariantResult(BaseModel):
    token_rec1: float
    entity_rec1: float


class HashComparisonReport(BaseModel):
    alpha: int
    seed: int
    variants: Dict[str, HashVariantResult] = {}
    fingerprint: str = ""
