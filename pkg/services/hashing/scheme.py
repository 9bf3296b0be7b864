import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from utils.errors import InfeasibleSchemeError

MASK = "MASK"
PAD = "PAD"
DEFAULT_SPECIALS: Tuple[str, ...] = (MASK, PAD)

EntityOrSpecial = Union[int, np.integer, str]


@dataclass(frozen=True)
class VocabSpec:
    size: int
    specials: Tuple[str, ...] = DEFAULT_SPECIALS

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"vocabulary size must be >= 1, got {self.size}")
        if len(set(self.specials)) != len(self.specials):
            raise ValueError(f"special token names must be unique: {self.specials}")
        for name in self.specials:
            if not name or name.strip().isdigit():
                raise ValueError(f"special token name {name!r} clashes with entity ids")


def hash_size_for(n_entities: int, alpha: int) -> int:
    return math.ceil(n_entities / alpha)


@dataclass(frozen=True)
class HashFunction:
    """One hash function: forward map plus its inverse lookup table in CSR form.

    ``order`` lists entity ids sorted by (token, id); bucket ``t`` is
    ``order[offsets[t]:offsets[t + 1]]``.
    """

    forward: np.ndarray
    hash_size: int
    order: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_forward(cls, forward: np.ndarray, hash_size: int) -> "HashFunction":
        forward = np.asarray(forward, dtype=np.int64)
        if forward.ndim != 1:
            raise ValueError("forward map must be one-dimensional")
        if forward.size and (forward.min() < 0 or forward.max() >= hash_size):
            raise ValueError(f"forward map has tokens outside [0, {hash_size})")
        order = np.lexsort((np.arange(forward.size), forward))
        counts = np.bincount(forward, minlength=hash_size)
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        for array in (forward, order, offsets):
            array.setflags(write=False)
        return cls(forward=forward, hash_size=hash_size, order=order, offsets=offsets)

    def bucket(self, token: int) -> np.ndarray:
        return self.order[self.offsets[token] : self.offsets[token + 1]]

    def bucket_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


def digest_keys(forward: np.ndarray, hash_size: int) -> np.ndarray:
    """Collapse each entity's digest (one column of ``forward``) into a sortable key."""
    m = forward.shape[0]
    if hash_size**m < 2**62:
        keys = np.zeros(forward.shape[1], dtype=np.int64)
        for j in range(m):
            keys = keys * hash_size + forward[j]
        return keys
    _, inverse = np.unique(forward.T, axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64)


def colliding_ids(forward: np.ndarray, hash_size: int) -> np.ndarray:
    """Ids whose full digest repeats that of a smaller id."""
    keys = digest_keys(forward, hash_size)
    order = np.argsort(keys, kind="stable")
    repeated = keys[order][1:] == keys[order][:-1]
    return np.sort(order[1:][repeated])


class HashScheme:
    """m hash functions over N entities with disjoint global token blocks.

    Global token layout: function ``j`` owns ``[j * hash_size, (j + 1) * hash_size)``;
    special ``k`` owns the ``m`` tokens ``m * hash_size + k * m + j`` after all
    ordinary blocks.
    """

    def __init__(self, functions: Sequence[HashFunction], alpha: int, specials: Sequence[str] = DEFAULT_SPECIALS):
        if not functions:
            raise ValueError("a scheme needs at least one hash function")
        hash_sizes = {f.hash_size for f in functions}
        sizes = {f.forward.size for f in functions}
        if len(hash_sizes) != 1 or len(sizes) != 1:
            raise ValueError("hash functions disagree on vocabulary or hash size")
        self.functions: Tuple[HashFunction, ...] = tuple(functions)
        self.alpha = int(alpha)
        self.vocab = VocabSpec(size=sizes.pop(), specials=tuple(specials))
        self.hash_size = hash_sizes.pop()
        self.forward = np.stack([f.forward for f in self.functions])
        self.forward.setflags(write=False)
        self._special_index: Dict[str, int] = {name: k for k, name in enumerate(self.vocab.specials)}

    @classmethod
    def from_functions(
        cls,
        forwards: Sequence[Union[np.ndarray, HashFunction]],
        alpha: int,
        specials: Sequence[str] = DEFAULT_SPECIALS,
        require_unique_digests: bool = True,
    ) -> "HashScheme":
        """Compose a scheme from independently built functions and validate it."""
        functions = []
        for item in forwards:
            if isinstance(item, HashFunction):
                functions.append(item)
            else:
                forward = np.asarray(item, dtype=np.int64)
                functions.append(HashFunction.from_forward(forward, hash_size_for(forward.size, alpha)))
        scheme = cls(functions, alpha, specials)
        scheme.validate(require_unique_digests=require_unique_digests)
        return scheme

    @property
    def m(self) -> int:
        return len(self.functions)

    @property
    def n_entities(self) -> int:
        return self.vocab.size

    @property
    def specials(self) -> Tuple[str, ...]:
        return self.vocab.specials

    @property
    def n_ordinary_tokens(self) -> int:
        return self.m * self.hash_size

    @property
    def n_tokens(self) -> int:
        return self.m * self.hash_size + self.m * len(self.specials)

    def validate(self, require_unique_digests: bool = True) -> None:
        for j, function in enumerate(self.functions):
            sizes = function.bucket_sizes()
            if sizes.max() > self.alpha:
                raise InfeasibleSchemeError(f"function {j} has a bucket of size {sizes.max()} > alpha={self.alpha}")
            if sizes.min() == 0:
                raise InfeasibleSchemeError(f"function {j} has an empty bucket")
        if require_unique_digests:
            clashes = colliding_ids(self.forward, self.hash_size)
            if clashes.size:
                raise InfeasibleSchemeError(f"{clashes.size} entities share a complete collision, e.g. id {clashes[0]}")

    def special_tokens(self, name: str) -> np.ndarray:
        if name not in self._special_index:
            raise KeyError(f"unknown special token {name!r}; declared: {self.specials}")
        base = self.n_ordinary_tokens + self._special_index[name] * self.m
        return np.arange(base, base + self.m, dtype=np.int64)

    def is_special(self, token: int) -> bool:
        return self.n_ordinary_tokens <= token < self.n_tokens

    def split_token(self, token: int) -> Tuple[int, int]:
        """Global ordinary token -> (function index, local token)."""
        if not 0 <= token < self.n_ordinary_tokens:
            raise ValueError(f"token {token} is not an ordinary hash token")
        return int(token // self.hash_size), int(token % self.hash_size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HashScheme):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and self.specials == other.specials
            and self.hash_size == other.hash_size
            and np.array_equal(self.forward, other.forward)
        )

    def __repr__(self) -> str:
        return (
            f"HashScheme(N={self.n_entities}, m={self.m}, alpha={self.alpha}, "
            f"hash_size={self.hash_size}, specials={list(self.specials)})"
        )


def hash_entity(scheme: HashScheme, entity: EntityOrSpecial) -> np.ndarray:
    """The m global tokens of an entity id or a declared special name."""
    if isinstance(entity, str):
        return scheme.special_tokens(entity)
    entity = int(entity)
    if not 0 <= entity < scheme.n_entities:
        raise IndexError(f"entity id {entity} outside [0, {scheme.n_entities})")
    blocks = np.arange(scheme.m, dtype=np.int64) * scheme.hash_size
    return blocks + scheme.forward[:, entity]


def bloom_digest(scheme: HashScheme, entities: Sequence[int]) -> np.ndarray:
    """Bloom digest of a segment: length m*n, laid out [i][j]."""
    ids = np.asarray(entities, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= scheme.n_entities):
        raise IndexError(f"segment has entity ids outside [0, {scheme.n_entities})")
    blocks = np.arange(scheme.m, dtype=np.int64) * scheme.hash_size
    return (scheme.forward[:, ids].T + blocks).reshape(-1)


def inverse_lookup(scheme: HashScheme, j: int, token: int) -> np.ndarray:
    if not 0 <= j < scheme.m:
        raise IndexError(f"hash function index {j} outside [0, {scheme.m})")
    if not 0 <= token < scheme.hash_size:
        raise IndexError(f"local token {token} outside [0, {scheme.hash_size})")
    return scheme.functions[j].bucket(token)


def bucket_histogram(scheme: HashScheme) -> List[Dict[int, int]]:
    histograms = []
    for function in scheme.functions:
        sizes, counts = np.unique(function.bucket_sizes(), return_counts=True)
        histograms.append({int(s): int(c) for s, c in zip(sizes, counts)})
    return histograms
