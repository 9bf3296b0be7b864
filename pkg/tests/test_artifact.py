import numpy as np
import pytest

from utils.artifact import canonical_json, decode_artifact, encode_artifact, read_artifact, write_artifact
from utils.errors import ArtifactError

MAGIC = b"TEST"


def _blob():
    arrays = {"a": np.arange(6, dtype="<i8").reshape(2, 3), "b": np.array([0.5, -1.25], dtype="<f4")}
    return encode_artifact(MAGIC, 1, {"kind": "demo", "n": 3}, arrays)


def test_decode_returns_manifest_and_arrays():
    manifest, arrays = decode_artifact(_blob(), MAGIC, 1)
    assert manifest["kind"] == "demo" and manifest["n"] == 3
    assert [spec["name"] for spec in manifest["arrays"]] == ["a", "b"]
    np.testing.assert_array_equal(arrays["a"], np.arange(6).reshape(2, 3))
    assert arrays["b"].dtype == np.float32
    np.testing.assert_array_equal(arrays["b"], [0.5, -1.25])


def test_encoding_is_byte_deterministic():
    assert _blob() == _blob()


def test_canonical_json_sorts_keys():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


@pytest.mark.parametrize("cut", [3, 20, 40])
def test_truncated_blob_is_rejected(cut):
    with pytest.raises(ArtifactError):
        decode_artifact(_blob()[:cut], MAGIC, 1)


def test_flipped_byte_fails_checksum():
    data = bytearray(_blob())
    data[-40] ^= 0xFF
    with pytest.raises(ArtifactError, match="checksum"):
        decode_artifact(bytes(data), MAGIC, 1)


def test_wrong_magic_and_version():
    with pytest.raises(ArtifactError, match="magic"):
        decode_artifact(_blob(), b"NOPE", 1)
    with pytest.raises(ArtifactError, match="version"):
        decode_artifact(_blob(), MAGIC, 2)


def test_file_helpers(tmp_path):
    path = str(tmp_path / "nested" / "x.bin")
    write_artifact(path, MAGIC, 1, {"kind": "demo"}, {"v": np.array([1, 2, 3], dtype="<u4")})
    manifest, arrays = read_artifact(path, MAGIC, 1)
    assert manifest["kind"] == "demo"
    np.testing.assert_array_equal(arrays["v"], [1, 2, 3])
    with pytest.raises(ArtifactError):
        read_artifact(str(tmp_path / "missing.bin"), MAGIC, 1)
