"""Conversions between dataset arrays and network tensors."""

from typing import Sequence, Tuple

import numpy as np
import torch

from limbtrace.core.exceptions import ShapeError
from limbtrace.models.sample import Sample
from limbtrace.models.target import PositionTarget


def images_to_tensor(
    images: Sequence[np.ndarray],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Stack (H, W, C) uint8 images into a (B, C, H, W) tensor scaled to [0, 1]."""
    arrays = [np.asarray(img) for img in images]
    arrays = [a[..., None] if a.ndim == 2 else a for a in arrays]
    batch = np.stack(arrays).astype(np.float64) / 255.0
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous().to(dtype)


def targets_to_tensors(
    targets: Sequence[PositionTarget],
    dtype: torch.dtype = torch.float32,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Normalized (B, n, length) labels and their validity mask."""
    values = np.stack([t.normalized() for t in targets])
    valid = np.stack([t.valid for t in targets])
    return torch.from_numpy(values).to(dtype), torch.from_numpy(valid)


def masks_to_tensor(
    masks: Sequence[np.ndarray],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Stack (H, W) boolean masks into a (B, 1, H, W) float tensor."""
    return torch.from_numpy(np.stack([np.asarray(m, dtype=np.float64) for m in masks])[:, None]).to(dtype)


def mask_of(sample: Sample, variant: str) -> np.ndarray:
    mask = sample.visible_mask if variant == "visible" else sample.whole_mask
    if mask is None:
        raise ShapeError(f"sample {sample.sample_id} has no {variant} mask")
    return mask


def check_input(batch: torch.Tensor, expected: Tuple[int, int, int]) -> None:
    """Raise ShapeError unless batch is (B, C, H, W) with (C, H, W) == expected."""
    if batch.dim() != 4 or tuple(batch.shape[1:]) != tuple(expected):
        raise ShapeError(f"expected input (B, {', '.join(map(str, expected))}), got {tuple(batch.shape)}")
