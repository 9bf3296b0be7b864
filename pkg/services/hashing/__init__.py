from .base import HashFunctionBuilder
from .coherent import CoherentBuilder, build_coherent_scheme
from .permutation import RandomPermutationBuilder, build_random_scheme
from .scheme import (
    DEFAULT_SPECIALS,
    MASK,
    PAD,
    HashFunction,
    HashScheme,
    VocabSpec,
    bloom_digest,
    bucket_histogram,
    colliding_ids,
    hash_entity,
    hash_size_for,
    inverse_lookup,
)
from .store import load_scheme, save_scheme, scheme_bytes, scheme_fingerprint, scheme_from_bytes

__all__ = [
    "DEFAULT_SPECIALS",
    "MASK",
    "PAD",
    "CoherentBuilder",
    "HashFunction",
    "HashFunctionBuilder",
    "HashScheme",
    "RandomPermutationBuilder",
    "VocabSpec",
    "bloom_digest",
    "bucket_histogram",
    "build_coherent_scheme",
    "build_random_scheme",
    "colliding_ids",
    "hash_entity",
    "hash_size_for",
    "inverse_lookup",
    "load_scheme",
    "save_scheme",
    "scheme_bytes",
    "scheme_fingerprint",
    "scheme_from_bytes",
]
