from abc import ABC, abstractmethod
from typing import List, Sequence

import numpy as np

from services.corpus import MaskedExample, Page, cut_segment, make_masked_example
from services.hashing import HashScheme
from utils.rng import derive_seed


class ExampleSource(ABC):
    """Deterministic supply of training examples indexed by step."""

    @abstractmethod
    def examples(self, step: int, batch_size: int) -> List[MaskedExample]:
        pass


class CorpusExampleSource(ExampleSource):
    """Fresh segments cut from random pages; example ``step * batch_size + slot`` uses its own derived seed."""

    def __init__(self, pages: Sequence[Page], scheme: HashScheme, n_max: int = 32, mask_rate: float = 0.15, seed: int = 0):
        self.pages = [p for p in pages if len(p) > 0]
        if not self.pages:
            raise ValueError("no non-empty pages to train on")
        self.scheme = scheme
        self.n_max = n_max
        self.mask_rate = mask_rate
        self.seed = seed

    def example(self, index: int) -> MaskedExample:
        rng = np.random.default_rng(derive_seed(self.seed, index))
        page = self.pages[int(rng.integers(0, len(self.pages)))]
        segment = cut_segment(page, self.n_max, rng)
        return make_masked_example(segment, self.scheme, self.mask_rate, rng)

    def examples(self, step: int, batch_size: int) -> List[MaskedExample]:
        return [self.example(step * batch_size + slot) for slot in range(batch_size)]


class FixedExampleSource(ExampleSource):
    """Cycles through a fixed list (overfit runs, prepared example caches)."""

    def __init__(self, examples: Sequence[MaskedExample]):
        if not examples:
            raise ValueError("FixedExampleSource needs at least one example")
        self._examples = list(examples)

    def __len__(self) -> int:
        return len(self._examples)

    def examples(self, step: int, batch_size: int) -> List[MaskedExample]:
        start = step * batch_size
        return [self._examples[(start + slot) % len(self._examples)] for slot in range(batch_size)]
