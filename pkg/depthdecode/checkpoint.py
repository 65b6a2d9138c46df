"""Persist models as a weight blob plus a key-value text manifest."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import torch
from torch import nn

from .const import CHECKPOINT_MANIFEST_SUFFIX, CHECKPOINT_SUFFIX
from .errors import CheckpointError

_LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _registry() -> Dict[str, type]:
    from .depth import DepthEstimator
    from .encdec import Decoder, Encoder
    from .perceptual import FeatureExtractor

    return {
        cls.__name__: cls for cls in (FeatureExtractor, Encoder, Decoder, DepthEstimator)
    }


def architecture_hash(model: nn.Module) -> str:
    """Return a sha256 over class name, constructor arguments and shapes."""
    description = {
        "class": type(model).__name__,
        "config": model.config(),
        "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
    }
    return hashlib.sha256(json.dumps(description, sort_keys=True).encode()).hexdigest()


def checkpoint_paths(stem: PathLike) -> Tuple[Path, Path]:
    """Return the (weights, manifest) paths of checkpoint `stem`."""
    stem = Path(stem)
    return (
        stem.with_name(stem.name + CHECKPOINT_SUFFIX),
        stem.with_name(stem.name + CHECKPOINT_MANIFEST_SUFFIX),
    )


def save_checkpoint(stem: PathLike, model: nn.Module, **metadata: Any) -> Path:
    """Write `<stem>.pt` and `<stem>.manifest`; return the manifest path."""
    weights, manifest = checkpoint_paths(stem)
    weights.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), weights)
    entries = {
        "model": type(model).__name__,
        "config": model.config(),
        "architecture_hash": architecture_hash(model),
        **metadata,
    }
    manifest.write_text(
        "".join(f"{key}={json.dumps(value, sort_keys=True)}\n" for key, value in entries.items()),
        encoding="utf-8",
    )
    _LOGGER.info("Saved %s checkpoint to %s", type(model).__name__, weights)
    return manifest


def read_manifest(stem: PathLike) -> Dict[str, Any]:
    """Read the key-value manifest of checkpoint `stem`."""
    _, manifest = checkpoint_paths(stem)
    if not manifest.is_file():
        raise CheckpointError(f"Checkpoint manifest not found: {manifest}")
    entries = {}
    for number, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{manifest}:{number}: expected key=value")
        try:
            entries[key] = json.loads(value)
        except json.JSONDecodeError as err:
            raise CheckpointError(f"{manifest}:{number}: {err.msg}") from err
    return entries


def load_checkpoint(
    stem: PathLike, map_location: Union[str, torch.device] = "cpu"
) -> Tuple[nn.Module, Dict[str, Any]]:
    """Rebuild the model of checkpoint `stem` and load its weights.

    Raises:
        CheckpointError: files are missing, the model class is unknown or
            the rebuilt architecture differs from the recorded one.
    """
    weights, _ = checkpoint_paths(stem)
    manifest = read_manifest(stem)
    if not weights.is_file():
        raise CheckpointError(f"Checkpoint weights not found: {weights}")
    model_class = _registry().get(manifest.get("model"))
    if model_class is None:
        raise CheckpointError(f"Unknown model class {manifest.get('model')} in {stem}")
    model = model_class.from_config(**manifest["config"])
    try:
        model.load_state_dict(torch.load(weights, map_location=map_location))
    except (RuntimeError, OSError) as err:
        raise CheckpointError(f"Cannot load weights {weights}: {err}") from err
    if architecture_hash(model) != manifest.get("architecture_hash"):
        raise CheckpointError(f"Architecture hash mismatch for {stem}")
    model.eval()
    return model, manifest
