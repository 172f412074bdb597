"""Checkpoint container shared by the regressor and the segmentation baseline."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import torch

from limbtrace.core.config import settings
from limbtrace.core.exceptions import CheckpointError, MissingCheckpoint
from limbtrace.models.state import ModelState, TrainHistory
from limbtrace.schemas.config import ModelName, ModelSpec, SegSpec
from limbtrace.services.regressor import build_model
from limbtrace.services.segbaseline import build_segmodel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def checkpoint_path(checkpoint_dir: PathLike, model: ModelName, cv_group: int) -> Path:
    return Path(checkpoint_dir) / f"{ModelName(model).value}_group{cv_group}.pt"


def history_path(checkpoint: PathLike) -> Path:
    return Path(checkpoint).with_suffix(".history.json")


def save_checkpoint(state: ModelState, path: PathLike, model: ModelName) -> Path:
    """
    Write spec, parameters and optimizer state with a format version.

    The payload only holds tensors and JSON-like values so it can be read
    back with ``weights_only=True``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload: Dict[str, Any] = {
        "version": settings.CHECKPOINT_VERSION,
        "model": ModelName(model).value,
        "kind": "regressor" if isinstance(state.spec, ModelSpec) else "segmenter",
        "spec": state.spec.model_dump(mode="json"),
        "state_dict": state.network.state_dict(),
        "optimizer": {
            "first_moments": state.first_moments,
            "second_moments": state.second_moments,
            "step": state.step,
        },
    }
    torch.save(payload, path)
    logger.info("Saved %s checkpoint to %s", ModelName(model).value, path)
    return path


def load_checkpoint(path: PathLike, model: ModelName) -> ModelState:
    """
    Rebuild a ModelState from a checkpoint.

    Raises:
        MissingCheckpoint: If the file does not exist.
        CheckpointError: If the file is unreadable, of another model, or of an
            unsupported version.
    """
    path = Path(path)
    model = ModelName(model)
    if not path.exists():
        raise MissingCheckpoint(model.value, path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc

    version = payload.get("version")
    if version != settings.CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {path}")
    if payload.get("model") != model.value:
        raise CheckpointError(f"{path} holds model '{payload.get('model')}', expected '{model.value}'")

    try:
        if payload["kind"] == "regressor":
            state = build_model(ModelSpec.model_validate(payload["spec"]))
        else:
            state = build_segmodel(SegSpec.model_validate(payload["spec"]))
        state.network.load_state_dict(payload["state_dict"])
        optimizer = payload["optimizer"]
        state.first_moments = dict(optimizer["first_moments"])
        state.second_moments = dict(optimizer["second_moments"])
        state.step = int(optimizer["step"])
    except (KeyError, RuntimeError, ValueError) as exc:
        raise CheckpointError(f"Malformed checkpoint {path}: {exc}") from exc
    return state


def save_history(history: TrainHistory, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(history.to_dict(), indent=2))
    return path
