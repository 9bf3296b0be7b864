from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

from utils.errors import InfeasibleSchemeError

from .scheme import HashFunction, hash_size_for


class HashFunctionBuilder(ABC):
    """Builds one alpha-to-one hash function, possibly aware of the ones built before it."""

    def __init__(self, alpha: int):
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {alpha}")
        self.alpha = alpha

    def hash_size(self, n_entities: int) -> int:
        if self.alpha > n_entities:
            raise InfeasibleSchemeError(f"alpha={self.alpha} exceeds the vocabulary size N={n_entities}")
        return hash_size_for(n_entities, self.alpha)

    @abstractmethod
    def build(self, n_entities: int, previous: Sequence[np.ndarray]) -> HashFunction:
        pass
