import hashlib

import numpy as np

from utils.artifact import decode_artifact, encode_artifact, read_artifact, write_artifact
from utils.errors import ArtifactError

from .scheme import HashFunction, HashScheme, hash_size_for

SCHEME_MAGIC = b"SBHS"
SCHEME_VERSION = 1


def _manifest(scheme: HashScheme) -> dict:
    return {
        "kind": "hash_scheme",
        "n_entities": scheme.n_entities,
        "m": scheme.m,
        "alpha": scheme.alpha,
        "hash_size": scheme.hash_size,
        "specials": list(scheme.specials),
    }


def scheme_bytes(scheme: HashScheme) -> bytes:
    return encode_artifact(SCHEME_MAGIC, SCHEME_VERSION, _manifest(scheme), {"forward": scheme.forward.astype("<u4")})


def scheme_fingerprint(scheme: HashScheme) -> str:
    return hashlib.sha256(scheme_bytes(scheme)).hexdigest()[:16]


def save_scheme(scheme: HashScheme, path: str) -> None:
    write_artifact(path, SCHEME_MAGIC, SCHEME_VERSION, _manifest(scheme), {"forward": scheme.forward.astype("<u4")})


def _from_artifact(manifest: dict, arrays: dict, source: str) -> HashScheme:
    try:
        n, m, alpha, hash_size = (int(manifest[k]) for k in ("n_entities", "m", "alpha", "hash_size"))
        forward = arrays["forward"].astype(np.int64)
        specials = tuple(manifest["specials"])
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"{source}: malformed scheme manifest: {e}") from e
    if forward.shape != (m, n) or hash_size != hash_size_for(n, alpha):
        raise ArtifactError(f"{source}: forward table shape {forward.shape} disagrees with N={n}, m={m}, alpha={alpha}")
    try:
        # Inverse tables are rebuilt rather than stored.
        functions = [HashFunction.from_forward(row, hash_size) for row in forward]
    except ValueError as e:
        raise ArtifactError(f"{source}: {e}") from e
    return HashScheme(functions, alpha, specials)


def load_scheme(path: str) -> HashScheme:
    manifest, arrays = read_artifact(path, SCHEME_MAGIC, SCHEME_VERSION)
    return _from_artifact(manifest, arrays, path)


def scheme_from_bytes(data: bytes) -> HashScheme:
    manifest, arrays = decode_artifact(data, SCHEME_MAGIC, SCHEME_VERSION)
    return _from_artifact(manifest, arrays, "<bytes>")
