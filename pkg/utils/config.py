import hashlib
import os
import sys
from typing import Any, Dict, Optional, Sequence

import toml
from pydantic import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    tomllib = None

from schemas.config import RunConfig
from utils.artifact import canonical_json
from utils.errors import ConfigError

RUN_ROOT_ENV = "SUPERBLOOM_RUN_ROOT"
DEFAULT_RUN_ROOT = "./runs"
RESOLVED_CONFIG = "resolved_config.toml"


def load_config_dict(config_file: str) -> Dict[str, Any]:
    try:
        if tomllib is not None:
            with open(config_file, "rb") as f:
                return tomllib.load(f)
        with open(config_file, "r", encoding="utf-8") as f:
            return toml.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {config_file}: {e}") from e
    except (toml.TomlDecodeError, ValueError) as e:
        raise ConfigError(f"{config_file} is not valid TOML: {e}") from e


def _parse_value(text: str) -> Any:
    """TOML literal if it parses (numbers, booleans, arrays, quoted strings), else the raw string."""
    try:
        return toml.loads(f"value = {text}")["value"]
    except toml.TomlDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` assignments on top of a raw config dict."""
    for item in overrides:
        path, sep, text = item.partition("=")
        if not sep or not path.strip():
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {key} is not a section")
            node = child
        node[keys[-1]] = _parse_value(text.strip())
    return data


def load_config(config_file: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    data = load_config_dict(config_file) if config_file else {}
    data = apply_overrides(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _drop_none(value: Any) -> Any:
    # TOML has no null; unset optional keys fall back to their defaults on reload.
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [_drop_none(v) for v in value]
    return value


def config_fingerprint(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config.model_dump(mode="json")).encode("utf-8")).hexdigest()[:12]


def dump_config(config: RunConfig) -> str:
    return toml.dumps(_drop_none(config.model_dump(mode="json")))


def echo_config(config: RunConfig, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_CONFIG)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# fingerprint {config_fingerprint(config)}\n")
        f.write(dump_config(config))
    return path


def run_root() -> str:
    return os.environ.get(RUN_ROOT_ENV, DEFAULT_RUN_ROOT)


def run_dir(config: RunConfig, command: str) -> str:
    """``<run root>/<command>-<fingerprint>``; one directory per resolved config."""
    return os.path.join(run_root(), f"{command}-{config_fingerprint(config)}")
