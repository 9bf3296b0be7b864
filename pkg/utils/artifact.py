"""Versioned, checksummed binary container shared by every artifact.

Layout (all integers little-endian):

    magic     4 bytes
    version   u16
    length    u32, byte length of the manifest
    manifest  canonical JSON (sorted keys, no whitespace), utf-8
    arrays    raw array bytes, concatenated in manifest["arrays"] order
    sha256    32 bytes over everything above

The manifest carries the artifact's own metadata plus an ``arrays`` list of
``{"name", "dtype", "shape"}`` entries describing the body.
"""

import hashlib
import json
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from utils.errors import ArtifactError

_HEADER = struct.Struct("<4sHI")
_DIGEST_SIZE = 32


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def encode_artifact(magic: bytes, version: int, manifest: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    specs = []
    chunks = []
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        little = array.astype(array.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": little.dtype.str, "shape": list(little.shape)})
        chunks.append(little.tobytes())
    full_manifest = dict(manifest)
    full_manifest["arrays"] = specs
    manifest_bytes = canonical_json(full_manifest).encode("utf-8")
    blob = _HEADER.pack(magic, version, len(manifest_bytes)) + manifest_bytes + b"".join(chunks)
    return blob + hashlib.sha256(blob).digest()


def decode_artifact(data: bytes, magic: bytes, version: int, source: str = "<bytes>") -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    if len(data) < _HEADER.size + _DIGEST_SIZE:
        raise ArtifactError(f"{source}: truncated file ({len(data)} bytes)")
    found_magic, found_version, manifest_len = _HEADER.unpack_from(data, 0)
    if found_magic != magic:
        raise ArtifactError(f"{source}: bad magic {found_magic!r}, expected {magic!r}")
    if found_version != version:
        raise ArtifactError(f"{source}: format version {found_version} is not supported (expected {version})")

    manifest_end = _HEADER.size + manifest_len
    if manifest_end + _DIGEST_SIZE > len(data):
        raise ArtifactError(f"{source}: truncated manifest")
    try:
        manifest = json.loads(data[_HEADER.size : manifest_end].decode("utf-8"))
        specs = manifest["arrays"]
        sizes = [int(np.dtype(s["dtype"]).itemsize * int(np.prod(s["shape"], dtype=np.int64))) for s in specs]
    except (ValueError, KeyError, TypeError) as e:
        raise ArtifactError(f"{source}: unreadable manifest: {e}") from e

    expected = manifest_end + sum(sizes) + _DIGEST_SIZE
    if len(data) != expected:
        raise ArtifactError(f"{source}: length mismatch, expected {expected} bytes, got {len(data)}")
    if hashlib.sha256(data[:-_DIGEST_SIZE]).digest() != data[-_DIGEST_SIZE:]:
        raise ArtifactError(f"{source}: checksum mismatch")

    arrays: Dict[str, np.ndarray] = {}
    offset = manifest_end
    for spec, size in zip(specs, sizes):
        dtype = np.dtype(spec["dtype"])
        flat = np.frombuffer(data, dtype=dtype, count=size // dtype.itemsize, offset=offset)
        arrays[spec["name"]] = flat.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
        offset += size
    return manifest, arrays


def write_artifact(path: str, magic: bytes, version: int, manifest: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
    blob = encode_artifact(magic, version, manifest, arrays)
    folder = os.path.dirname(path)
    try:
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "wb") as f:
            f.write(blob)
    except OSError as e:
        raise ArtifactError(f"cannot write {path}: {e}") from e


def read_artifact(path: str, magic: bytes, version: int) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ArtifactError(f"cannot read {path}: {e}") from e
    return decode_artifact(data, magic, version, source=path)
