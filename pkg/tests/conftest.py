import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from schemas.config import ModelConfig, ModelSettings  # noqa: E402
from services.corpus import Page  # noqa: E402
from services.hashing import VocabSpec, build_random_scheme  # noqa: E402


@pytest.fixture
def small_scheme():
    """N=60, m=2, alpha=6: hash_size 10."""
    return build_random_scheme(VocabSpec(60), m=2, alpha=6, seed=3)


@pytest.fixture
def tiny_scheme():
    """N=8, m=2, alpha=2: hash_size 4."""
    return build_random_scheme(VocabSpec(8), m=2, alpha=2, seed=7)


def make_model_config(scheme, **overrides) -> ModelConfig:
    settings = dict(d=8, n_heads=2, d_ff=16, n_layers=2, seq_len=8)
    settings.update(overrides)
    return ModelConfig.from_scheme(ModelSettings(**settings), scheme)


@pytest.fixture
def pages():
    rng = np.random.default_rng(11)
    return [Page(rng.integers(0, 60, size=int(rng.integers(3, 20)))) for _ in range(40)]
