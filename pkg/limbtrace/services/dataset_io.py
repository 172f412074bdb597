"""
On-disk dataset format.

    <root>/manifest.json
    <root>/samples/<id>/image.png     RGB rendering
    <root>/samples/<id>/depth.png     optional synthetic depth band image
    <root>/samples/<id>/whole.png     1-bit whole-branch mask
    <root>/samples/<id>/visible.png   1-bit visible-branch mask
    <root>/samples/<id>/target.csv    row_index, branch_<b>_x..., valid_flag
    <root>/samples/<id>/meta.json     SampleMeta
    <root>/samples/<id>/scene.json    geometry dump (full renders only, not crops)

Targets are stored in the scan frame of the tree kind (columns for
horizontal vines). Loading in the row frame transposes vine samples so every
network sees row-scanned labels.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
import pandas as pd
from PIL import Image

from limbtrace.core.exceptions import DatasetError
from limbtrace.models.sample import Sample
from limbtrace.models.scene import SceneBundle, TreeScene
from limbtrace.models.target import PositionTarget, ScanAxis
from limbtrace.schemas.dataset import Manifest, SampleMeta
from limbtrace.services.annotation import transpose_sample

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST = "manifest.json"


def sample_dir(root: PathLike, sample_id: str) -> Path:
    return Path(root) / "samples" / sample_id


def write_sample(root: PathLike, meta: SampleMeta, scene: TreeScene, bundle: SceneBundle) -> Path:
    """Write every file of one sample and return its directory."""
    directory = _write_arrays(root, meta, bundle.image, bundle.whole_mask, bundle.visible_mask, bundle.target)
    (directory / "scene.json").write_text(json.dumps(scene.to_dict(), indent=2))
    return directory


def write_derived(root: PathLike, meta: SampleMeta, sample: Sample) -> Path:
    """Write an augmented sample in its stored scan frame; it has no scene.json."""
    return _write_arrays(root, meta, sample.image, sample.whole_mask, sample.visible_mask, sample.target)


def _write_arrays(
    root: PathLike,
    meta: SampleMeta,
    image: np.ndarray,
    whole_mask: np.ndarray,
    visible_mask: np.ndarray,
    target: PositionTarget,
) -> Path:
    directory = sample_dir(root, meta.sample_id)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image[..., :3])).save(directory / "image.png")
    if image.shape[-1] == 4:
        Image.fromarray(np.ascontiguousarray(image[..., 3])).save(directory / "depth.png")
    write_mask(directory / "whole.png", whole_mask)
    write_mask(directory / "visible.png", visible_mask)
    write_positions(directory / "target.csv", target)
    (directory / "meta.json").write_text(meta.model_dump_json(indent=2))
    return directory


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    """Save a boolean mask as a 1-bit PNG."""
    Image.fromarray(np.asarray(mask, dtype=bool)).save(path)


def read_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("1"), dtype=bool)


def write_positions(path: PathLike, target: PositionTarget) -> None:
    target.to_frame().to_csv(path, index=False)


def read_positions(path: PathLike, width: int, height: int, axis: ScanAxis = ScanAxis.ROWS) -> PositionTarget:
    return PositionTarget.from_frame(pd.read_csv(path), width, height, axis)


def write_manifest(root: PathLike, manifest: Manifest) -> Path:
    path = Path(root) / MANIFEST
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    logger.info("Wrote manifest with %s samples to %s", len(manifest.samples), path)
    return path


def load_manifest(root: PathLike) -> Manifest:
    """
    Raises:
        DatasetError: If the manifest is missing or malformed.
    """
    path = Path(root) / MANIFEST
    try:
        return Manifest.model_validate_json(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"No dataset manifest at {path}; run 'generate' first") from exc
    except ValueError as exc:
        raise DatasetError(f"Malformed manifest at {path}: {exc}") from exc


def load_scene(root: PathLike, sample_id: str) -> TreeScene:
    path = sample_dir(root, sample_id) / "scene.json"
    try:
        return TreeScene.from_dict(json.loads(path.read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetError(f"Cannot read scene geometry {path}: {exc}") from exc


def load_sample(root: PathLike, sample_id: str, row_frame: bool = True) -> Sample:
    """
    Read one sample back into memory.

    Raises:
        DatasetError: If a file of the sample is missing or unreadable.
    """
    directory = sample_dir(root, sample_id)
    try:
        meta = SampleMeta.model_validate_json((directory / "meta.json").read_text())
        with Image.open(directory / "image.png") as rendered:
            image = np.asarray(rendered.convert("RGB"))
        depth_path = directory / "depth.png"
        if depth_path.exists():
            with Image.open(depth_path) as depth:
                image = np.dstack([image, np.asarray(depth.convert("L"))])
        width, height = meta.canvas
        target = read_positions(directory / "target.csv", width, height, meta.kind.scan_axis)
        sample = Sample(
            sample_id=sample_id,
            image=image,
            target=target,
            whole_mask=read_mask(directory / "whole.png"),
            visible_mask=read_mask(directory / "visible.png"),
            occlusion_fraction=meta.occlusion_fraction,
            condition=meta.regime.value,
            meta=meta.model_dump(mode="json"),
        )
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetError(f"Cannot load sample {sample_id} from {directory}: {exc}") from exc

    if row_frame and target.axis is ScanAxis.COLUMNS:
        sample = transpose_sample(sample)
    return sample


def load_samples(root: PathLike, sample_ids: Iterable[str], row_frame: bool = True) -> List[Sample]:
    return [load_sample(root, sample_id, row_frame) for sample_id in sample_ids]
