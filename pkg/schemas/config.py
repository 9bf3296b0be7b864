from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class HashKind(str, Enum):
    random = "random"
    coherent = "coherent"


class LossMode(str, Enum):
    full_softmax = "full_softmax"
    sampled_softmax = "sampled_softmax"  # unhashed vocabulary only (m=1, alpha=1)


class ScoreKind(str, Enum):
    log_sum = "log_sum"
    min = "min"
    max = "max"


class DType(str, Enum):
    float32 = "float32"
    float64 = "float64"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchemeConfig(_Section):
    vocab_size: int = Field(1000, ge=1)
    m: int = Field(2, ge=1)
    alpha: int = Field(20, ge=1)
    seed: Optional[int] = None
    kind: HashKind = HashKind.random
    specials: List[str] = ["MASK", "PAD"]
    require_unique_digests: bool = True


class ModelSettings(_Section):
    d: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    d_head: Optional[int] = Field(None, ge=1)  # defaults to d // n_heads
    d_ff: int = Field(256, ge=1)
    n_layers: int = Field(2, ge=0)
    seq_len: int = Field(32, ge=1)
    tie_embeddings: bool = True
    use_positions: bool = False
    dtype: DType = DType.float32
    layer_norm_eps: float = Field(1e-6, gt=0)
    init_std: float = Field(0.02, gt=0)

    @property
    def head_dim(self) -> int:
        return self.d_head or max(1, self.d // self.n_heads)

    @model_validator(mode="after")
    def _heads_fit(self):
        if self.n_heads * self.head_dim > self.d:
            raise ValueError(f"n_heads * d_head = {self.n_heads * self.head_dim} exceeds d = {self.d}")
        return self


class ModelConfig(ModelSettings):
    """Model settings completed with the vocabulary layout of a hash scheme."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    m: int = Field(1, ge=1)
    hash_size: int = Field(1, ge=1)
    n_specials: int = Field(2, ge=0)

    @property
    def n_ordinary_tokens(self) -> int:
        return self.m * self.hash_size

    @property
    def n_tokens(self) -> int:
        return self.m * (self.hash_size + self.n_specials)

    @classmethod
    def from_scheme(cls, settings: ModelSettings, scheme) -> "ModelConfig":
        return cls(
            **settings.model_dump(),
            m=scheme.m,
            hash_size=scheme.hash_size,
            n_specials=len(scheme.specials),
        )


class TrainConfig(_Section):
    batch_size: int = Field(32, ge=1)
    init_lr: float = Field(2e-4, gt=0)
    warmup_steps: int = Field(1000, ge=1)
    total_steps: int = Field(10000, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    seed: Optional[int] = None
    eval_every: int = Field(1000, ge=0)  # 0 disables periodic evaluation
    checkpoint_every: int = Field(5000, ge=0)  # 0 keeps only the final checkpoint
    loss_mode: LossMode = LossMode.full_softmax
    num_negatives: int = Field(128, ge=1)
    clip_norm: Optional[float] = Field(1.0, gt=0)
    mask_rate: float = Field(0.15, gt=0, le=1)
    eval_examples: int = Field(256, ge=1)


class InferConfig(_Section):
    k: int = Field(20, ge=1)
    beam: int = Field(20, ge=1)
    iters: int = Field(1, ge=0)  # 0 runs until certified
    score_fn: ScoreKind = ScoreKind.log_sum


class EvalConfig(_Section):
    ks: List[int] = [1, 10, 20]
    beam_widths: List[int] = [1, 10, 20, 100]
    depths: List[int] = [1, 4]
    alphas: List[int] = [10, 20]
    seeds: List[int] = [0, 1, 2]
    max_examples: Optional[int] = Field(None, ge=1)
    pretrain_steps: int = Field(2000, ge=1)
    embedding_source: str = ""  # .npy matrix for coherent hashing; empty trains an unhashed pre-run

    @model_validator(mode="after")
    def _positive_lists(self):
        for name in ("ks", "beam_widths", "alphas"):
            values = getattr(self, name)
            if not values or min(values) < 1:
                raise ValueError(f"{name} must be a non-empty list of positive integers")
        if min(self.depths, default=0) < 0:
            raise ValueError("depths must be non-negative")
        return self


class CorpusConfig(_Section):
    path: str = ""
    vocab_file: str = ""
    test_frac: float = Field(0.1, ge=0, lt=1)
    split_seed: Optional[int] = None
    n_entities: int = Field(20000, ge=1)
    n_pages: int = Field(20000, ge=1)
    n_clusters: int = Field(500, ge=1)
    zipf_s: float = Field(1.0, gt=0)
    min_page_len: int = Field(8, ge=1)
    max_page_len: int = Field(48, ge=1)
    cluster_affinity: float = Field(0.8, ge=0, le=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _page_lengths(self):
        if self.min_page_len > self.max_page_len:
            raise ValueError("min_page_len exceeds max_page_len")
        return self


class RunConfig(_Section):
    seed: int = 0
    scheme: SchemeConfig = Field(default_factory=SchemeConfig)
    model: ModelSettings = Field(default_factory=ModelSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    infer: InferConfig = Field(default_factory=InferConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)

    @model_validator(mode="after")
    def _inherit_seed(self):
        # Sections without their own seed follow the global one.
        for section in (self.scheme, self.train, self.corpus):
            if section.seed is None:
                section.seed = self.seed
        if self.corpus.split_seed is None:
            self.corpus.split_seed = self.seed
        if self.train.loss_mode == LossMode.sampled_softmax and (self.scheme.m != 1 or self.scheme.alpha != 1):
            raise ValueError("sampled_softmax training needs the unhashed vocabulary (scheme.m = 1, scheme.alpha = 1)")
        return self
