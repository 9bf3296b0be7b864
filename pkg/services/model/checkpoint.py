from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError

from schemas.config import ModelConfig
from services.hashing import HashScheme, scheme_fingerprint
from utils.artifact import read_artifact, write_artifact
from utils.errors import ArtifactError, ConfigError
from utils.log import logger

from .params import ModelParameters, check_shapes, parameter_shapes

CHECKPOINT_MAGIC = b"SBCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParameters
    config: ModelConfig
    scheme_fingerprint: str
    step: int = 0
    first_moments: Optional[ModelParameters] = None
    second_moments: Optional[ModelParameters] = None
    rng_state: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def has_optimizer_state(self) -> bool:
        return self.first_moments is not None and self.second_moments is not None


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Parameters (and optimizer moments when present) in the model dtype, little-endian."""
    names = list(parameter_shapes(checkpoint.config))
    problems = check_shapes(checkpoint.params, checkpoint.config)
    if problems:
        raise ConfigError(f"parameters do not match the model config: {'; '.join(problems)}")

    arrays = {f"param/{name}": checkpoint.params[name] for name in names}
    if checkpoint.has_optimizer_state:
        arrays.update({f"adam_m/{name}": checkpoint.first_moments[name] for name in names})
        arrays.update({f"adam_v/{name}": checkpoint.second_moments[name] for name in names})
    manifest = {
        "kind": "checkpoint",
        "config": checkpoint.config.model_dump(mode="json"),
        "scheme_fingerprint": checkpoint.scheme_fingerprint,
        "step": int(checkpoint.step),
        "rng_state": checkpoint.rng_state,
        "metadata": checkpoint.metadata,
    }
    write_artifact(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, manifest, arrays)
    logger.info(f"checkpoint step={checkpoint.step} written to {path}")


def load_checkpoint(path: str, scheme: Optional[HashScheme] = None) -> Checkpoint:
    """Read a checkpoint; with ``scheme`` given, refuse one trained on a different scheme."""
    manifest, arrays = read_artifact(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        config = ModelConfig.model_validate(manifest["config"])
    except (KeyError, ValidationError) as e:
        raise ArtifactError(f"{path}: unreadable model config: {e}") from e

    if scheme is not None:
        expected = scheme_fingerprint(scheme)
        if manifest.get("scheme_fingerprint") != expected:
            raise ConfigError(
                f"{path} was trained with scheme {manifest.get('scheme_fingerprint')}, "
                f"but the supplied scheme is {expected}"
            )

    def group(prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix) :]: value for name, value in arrays.items() if name.startswith(prefix)}

    params = group("param/")
    problems = check_shapes(params, config)
    if problems:
        raise ArtifactError(f"{path}: parameters do not match the stored config: {'; '.join(problems)}")
    first, second = group("adam_m/"), group("adam_v/")

    return Checkpoint(
        params=params,
        config=config,
        scheme_fingerprint=manifest.get("scheme_fingerprint", ""),
        step=int(manifest.get("step", 0)),
        first_moments=first or None,
        second_moments=second or None,
        rng_state=manifest.get("rng_state"),
        metadata=manifest.get("metadata") or {},
    )
