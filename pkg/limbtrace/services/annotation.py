"""
Label model: polylines to regression targets, label-aware augmentations and
cross-validation splits.
"""

import dataclasses
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from limbtrace.core.config import settings
from limbtrace.core.exceptions import (
    InvalidCrop,
    NonScannableGeometry,
    ShapeError,
    TooFewSamples,
    ValidationError,
)
from limbtrace.models.sample import Sample
from limbtrace.models.target import CropAnchor, PositionTarget, ScanAxis, SplitAssignment, longest_run

logger = logging.getLogger(__name__)


def polyline_to_target(
    polylines: Sequence[np.ndarray],
    canvas: Tuple[int, int],
    n_branches: int,
    axis: ScanAxis = ScanAxis.ROWS,
) -> PositionTarget:
    """
    Scan every line of the canvas and record where each branch crosses it.

    Lines outside a polyline's scan span are marked invalid for that branch.
    When fewer polylines than channels are given, the last polyline fills the
    remaining channels. Channels are ordered so that channel 0 is the leftmost
    branch (topmost for column scans) on the first line where they differ;
    joined branches therefore share one coordinate on every line after they meet.

    Args:
        polylines: (k, 2) arrays of (x, y) points, strictly increasing along the scan axis.
        canvas: (width, height) in pixels.
        n_branches: Number of target channels.
        axis: Scan axis of the target.

    Raises:
        NonScannableGeometry: If a polyline is not strictly monotone along the scan axis.
        ShapeError: If there are more polylines than channels.
    """
    polylines = list(polylines)
    width, height = (int(v) for v in canvas)
    axis = ScanAxis(axis)
    if len(polylines) > n_branches:
        raise ShapeError(f"{len(polylines)} polylines do not fit into {n_branches} channels")

    scan_dim, cross_dim = (1, 0) if axis is ScanAxis.ROWS else (0, 1)
    length = height if axis is ScanAxis.ROWS else width
    lines = np.arange(length, dtype=np.float64)
    coords = np.zeros((n_branches, length))
    valid = np.zeros((n_branches, length), dtype=bool)

    for b, polyline in enumerate(polylines):
        points = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
        scan, cross = points[:, scan_dim], points[:, cross_dim]
        if points.shape[0] == 0 or np.any(np.diff(scan) <= 0):
            raise NonScannableGeometry(f"polyline {b} is not strictly increasing along {axis.value}")
        inside = (lines >= scan[0]) & (lines <= scan[-1])
        coords[b, inside] = np.interp(lines[inside], scan, cross)
        valid[b] = inside

    if polylines:
        for b in range(len(polylines), n_branches):
            coords[b], valid[b] = coords[len(polylines) - 1], valid[len(polylines) - 1]

    order = channel_order(coords, valid)
    return PositionTarget(coords[order], valid[order], width, height, axis)


def channel_order(coords: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Permutation sorting channels by coordinate on the first line where they differ."""
    both = valid.all(axis=0)
    differs = both & (np.ptp(coords, axis=0) > 0)
    if not differs.any():
        return np.arange(coords.shape[0])
    line = int(np.argmax(differs))
    return np.argsort(coords[:, line], kind="stable")


def hflip(image: np.ndarray, target: PositionTarget) -> Tuple[np.ndarray, PositionTarget]:
    """
    Mirror an image left to right together with its labels.

    For row scans the coordinate becomes (width - 1) - coord and channels are
    re-sorted so channel 0 stays the leftmost branch. For column scans the
    scan order is reversed.

    Raises:
        ShapeError: If the target canvas does not match the image.
    """
    image = np.asarray(image)
    if (target.height, target.width) != image.shape[:2]:
        raise ShapeError(
            f"target canvas {target.width}x{target.height} does not match image {image.shape[1]}x{image.shape[0]}"
        )
    mirrored = np.ascontiguousarray(image[:, ::-1])

    if target.axis is ScanAxis.ROWS:
        coords = (target.width - 1) - target.coords
        order = channel_order(coords, target.valid)
        flipped = PositionTarget(coords[order], target.valid[order], target.width, target.height, target.axis)
    else:
        flipped = PositionTarget(
            target.coords[:, ::-1], target.valid[:, ::-1], target.width, target.height, target.axis
        )
    return mirrored, flipped


def flip_sample(sample: Sample) -> Sample:
    """hflip applied to a whole sample, masks included."""
    image, target = hflip(sample.image, sample.target)
    masks = {
        name: np.ascontiguousarray(mask[:, ::-1]) if mask is not None else None
        for name, mask in (("whole_mask", sample.whole_mask), ("visible_mask", sample.visible_mask))
    }
    return dataclasses.replace(sample, image=image, target=target, **masks)


def transpose_sample(sample: Sample) -> Sample:
    """Swap image rows and columns so a horizontal vine is scanned by rows."""

    def swap(array: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if array is None:
            return None
        return np.ascontiguousarray(np.swapaxes(array, 0, 1))

    return dataclasses.replace(
        sample,
        image=swap(sample.image),
        target=sample.target.transpose(),
        whole_mask=swap(sample.whole_mask),
        visible_mask=swap(sample.visible_mask),
    )


def crop_augment(
    image: np.ndarray,
    target: PositionTarget,
    anchor: CropAnchor,
    ratio: float = settings.CROP_RATIO,
    output_size: Optional[Tuple[int, int]] = None,
) -> Tuple[np.ndarray, PositionTarget]:
    """
    Cut a square window of side ratio x H at the anchor and rescale it.

    The window is horizontally centered. Images are resampled bilinearly;
    labels follow the exact affine map between window and output pixels
    (pixel centers at integer coordinates). Lines whose branch leaves the
    window are invalidated and each branch keeps its longest valid run.

    Args:
        image: (H, W) or (H, W, C) uint8 array.
        target: Row-scanned labels on the same canvas.
        anchor: top, center or bottom.
        ratio: Window side relative to the image height, in (0, 1].
        output_size: (height, width) of the result; defaults to the input size.

    Raises:
        InvalidCrop: If the ratio is out of range or the window is wider than the image.
    """
    image = np.asarray(image)
    height, width = image.shape[:2]
    if target.axis is not ScanAxis.ROWS:
        raise ShapeError("crop_augment expects a row-scanned target; transpose the sample first")
    if (target.height, target.width) != (height, width):
        raise ShapeError("target canvas does not match image")
    if not 0.0 < ratio <= 1.0:
        raise InvalidCrop(f"crop ratio must be in (0, 1], got {ratio}")
    side = int(round(ratio * height))
    if side < 1 or side > width:
        raise InvalidCrop(f"crop window of side {side} does not fit a {width}x{height} canvas")

    anchor = CropAnchor(anchor)
    y0 = {CropAnchor.TOP: 0, CropAnchor.CENTER: (height - side) // 2, CropAnchor.BOTTOM: height - side}[anchor]
    x0 = (width - side) // 2
    out_h, out_w = output_size or (height, width)
    scale_y, scale_x = out_h / side, out_w / side

    window = image[y0:y0 + side, x0:x0 + side]
    channels = window.reshape(side, side, -1).astype(np.float32)
    resized = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(channels[..., c])).resize((out_w, out_h), Image.Resampling.BILINEAR)
        )
        for c in range(channels.shape[-1])
    ]
    cropped = np.clip(np.rint(np.stack(resized, axis=-1)), 0, 255).astype(np.uint8)
    if image.ndim == 2:
        cropped = cropped[..., 0]

    # Source row of every output row, clamped to the window like the resampler
    if scale_y == 1.0:
        source = np.arange(out_h, dtype=np.float64) + y0
    else:
        source = (np.arange(out_h) + 0.5) / scale_y - 0.5 + y0
    source = np.clip(source, y0, y0 + side - 1)
    lower = np.floor(source).astype(int)
    upper = np.minimum(lower + 1, height - 1)
    frac = source - lower

    coords = (1.0 - frac) * target.coords[:, lower] + frac * target.coords[:, upper]
    valid = target.valid[:, lower] & (target.valid[:, upper] | (frac == 0.0))
    if scale_x == 1.0:
        coords = coords - x0
    else:
        coords = (coords - x0 + 0.5) * scale_x - 0.5
    valid &= (coords >= 0.0) & (coords <= out_w - 1)
    valid = np.array([longest_run(v) for v in valid])

    return cropped, PositionTarget(coords, valid, out_w, out_h, ScanAxis.ROWS)


def crop_sample(sample: Sample, anchor: CropAnchor, ratio: float = settings.CROP_RATIO) -> Sample:
    """
    crop_augment applied to a row-frame sample, masks included.

    Masks share the image window and resampling and are re-binarized at half
    intensity. The crop keeps the canvas size and gets the id
    ``<sample_id>_<anchor>``.
    """
    anchor = CropAnchor(anchor)
    height, width = sample.image.shape[:2]
    image = sample.image.reshape(height, width, -1)
    names = [name for name in ("whole_mask", "visible_mask") if getattr(sample, name) is not None]
    planes = [image] + [np.asarray(getattr(sample, name), dtype=np.uint8)[..., None] * 255 for name in names]
    cropped, target = crop_augment(np.concatenate(planes, axis=-1), sample.target, anchor, ratio)

    channels = image.shape[-1]
    masks = {name: cropped[..., channels + i] >= 128 for i, name in enumerate(names)}
    cropped_image = cropped[..., :channels] if sample.image.ndim == 3 else cropped[..., 0]
    return dataclasses.replace(
        sample,
        sample_id=f"{sample.sample_id}_{anchor.value}",
        image=np.ascontiguousarray(cropped_image),
        target=target,
        **masks,
    )


def split_cv_groups(sample_ids: Iterable[str], k: int = settings.CV_GROUPS, seed: int = 0) -> SplitAssignment:
    """
    Seeded shuffle followed by round-robin assignment to groups 1..k.

    Group sizes differ by at most one.

    Raises:
        ValidationError: If k < 2 or ids repeat.
        TooFewSamples: If there are fewer samples than groups.
    """
    ids: List[str] = list(sample_ids)
    if k < 2:
        raise ValidationError(f"need at least 2 cross-validation groups, got {k}")
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique")
    if k > len(ids):
        raise TooFewSamples(f"{len(ids)} samples cannot fill {k} groups")

    order = np.random.default_rng(seed).permutation(len(ids))
    group_at = np.empty(len(ids), dtype=int)
    group_at[order] = np.arange(len(ids)) % k + 1
    split = SplitAssignment({sample_id: int(g) for sample_id, g in zip(ids, group_at)}, k=k, seed=seed)
    logger.debug("Split %s samples into groups %s", len(ids), split.sizes())
    return split
