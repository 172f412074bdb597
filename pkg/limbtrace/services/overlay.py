"""Overlay of ground-truth and predicted centerlines on a sample image."""

from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from limbtrace.models.target import PositionTarget, ScanAxis

GT_COLOR = (255, 0, 0)
PREDICTION_COLOR = (255, 255, 0)


def centerline_runs(target: PositionTarget) -> List[List[Tuple[float, float]]]:
    """(x, y) polylines, one per contiguous valid run of each branch."""
    runs = []
    for b in range(target.n_branches):
        lines = np.flatnonzero(target.valid[b])
        if lines.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(lines) > 1) + 1
        for chunk in np.split(lines, breaks):
            coords = target.coords[b, chunk]
            if target.axis is ScanAxis.ROWS:
                runs.append([(float(x), float(y)) for x, y in zip(coords, chunk)])
            else:
                runs.append([(float(x), float(y)) for x, y in zip(chunk, coords)])
    return runs


def render_overlay(
    image: np.ndarray,
    ground_truth: PositionTarget,
    predictions: Sequence[PositionTarget],
) -> Image.Image:
    """
    Draw 1-pixel polylines: predictions in yellow first, ground truth in red on top.
    """
    rgb = np.asarray(image)
    if rgb.ndim == 2:
        rgb = np.stack([rgb] * 3, axis=-1)
    canvas = Image.fromarray(np.ascontiguousarray(rgb[..., :3]).astype(np.uint8))
    draw = ImageDraw.Draw(canvas)
    for target, color in [(p, PREDICTION_COLOR) for p in predictions] + [(ground_truth, GT_COLOR)]:
        for run in centerline_runs(target):
            if len(run) == 1:
                draw.point(run, fill=color)
            else:
                draw.line(run, fill=color, width=1)
    return canvas
