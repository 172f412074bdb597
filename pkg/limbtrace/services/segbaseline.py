"""Segmentation stage of the curve-fitting baseline."""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from limbtrace.core.config import settings
from limbtrace.core.exceptions import ShapeError
from limbtrace.models.sample import Sample
from limbtrace.models.state import ModelState, TrainHistory
from limbtrace.networks.initialization import init_parameters
from limbtrace.networks.segmenter import SegmentationUNet
from limbtrace.schemas.config import SegSpec, SegVariant, TrainConfig
from limbtrace.services.regressor import FD_STEP, RELATIVE_FLOOR, GradientCheckReport
from limbtrace.services.tensors import check_input, images_to_tensor, mask_of, masks_to_tensor
from limbtrace.services.training import fit

logger = logging.getLogger(__name__)

DICE_SMOOTHING = 1.0


def build_segmodel(spec: SegSpec) -> ModelState:
    """
    Instantiate the encoder-decoder with seeded fan-in uniform weights and zero biases.

    Raises:
        SpecMismatch: If the spec is inconsistent.
    """
    spec.check()
    network = init_parameters(SegmentationUNet(spec), spec.seed)
    state = ModelState.fresh(spec, network)
    logger.debug("Built %s segmenter with %s parameters", spec.variant.value, state.parameter_count())
    return state


def weighted_dice_loss(
    probabilities: torch.Tensor,
    mask: torch.Tensor,
    foreground_weight: Optional[float] = None,
) -> torch.Tensor:
    """
    1 - (2 sum(w p g) + s) / (sum(w p) + sum(w g) + s) with s = 1.

    w is ``foreground_weight`` on foreground pixels and 1 elsewhere. When no
    weight is given it is the background/foreground pixel ratio of the batch
    (1 for a batch without foreground).

    Raises:
        ShapeError: If the two tensors differ in shape.
    """
    mask = torch.as_tensor(mask).to(probabilities.dtype)
    if probabilities.shape != mask.shape:
        raise ShapeError(f"probabilities {tuple(probabilities.shape)} and mask {tuple(mask.shape)} differ")
    foreground = mask > 0.5
    if foreground_weight is None:
        fg = int(foreground.sum())
        foreground_weight = (mask.numel() - fg) / fg if fg else 1.0
    weights = torch.where(foreground, torch.full_like(mask, float(foreground_weight)), torch.ones_like(mask))
    overlap = (weights * probabilities * mask).sum()
    denominator = (weights * probabilities).sum() + (weights * mask).sum() + DICE_SMOOTHING
    return 1.0 - (2.0 * overlap + DICE_SMOOTHING) / denominator


def dice_gradient_check(
    probabilities: np.ndarray,
    mask: np.ndarray,
    foreground_weight: Optional[float] = None,
    tolerance: float = 1e-5,
) -> GradientCheckReport:
    """Autograd gradient of weighted_dice_loss against central differences, per pixel, in float64."""
    p = torch.tensor(np.asarray(probabilities, dtype=np.float64), requires_grad=True)
    g = torch.tensor(np.asarray(mask, dtype=np.float64))
    weighted_dice_loss(p, g, foreground_weight).backward()
    analytic = p.grad.view(-1)

    worst, worst_entry = 0.0, ""
    flat = p.detach().clone().view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + FD_STEP
            plus = float(weighted_dice_loss(flat.view(p.shape), g, foreground_weight))
            flat[i] = original - FD_STEP
            minus = float(weighted_dice_loss(flat.view(p.shape), g, foreground_weight))
            flat[i] = original
            numeric = (plus - minus) / (2.0 * FD_STEP)
            exact = analytic[i].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
            if error > worst:
                worst, worst_entry = error, f"pixel[{i}]"
    return GradientCheckReport(worst, flat.numel(), 0, tolerance, worst_entry)


def _variant_loss(variant: SegVariant):
    def loss(network: nn.Module, batch: Sequence[Sample]) -> torch.Tensor:
        dtype = next(network.parameters()).dtype
        images = images_to_tensor([s.image for s in batch], dtype)
        masks = masks_to_tensor([mask_of(s, variant.value) for s in batch], dtype)
        return weighted_dice_loss(network(images), masks)

    return loss


def train_seg(
    spec: SegSpec,
    dataset: Sequence[Sample],
    config: TrainConfig,
    state: Optional[ModelState] = None,
) -> Tuple[ModelState, TrainHistory]:
    """
    Fit the segmenter with weighted dice loss.

    The visible variant learns ``visible_mask``, the whole variant ``whole_mask``.
    """
    state = state or build_segmodel(spec)
    return fit(state, dataset, config, _variant_loss(spec.variant), label=f"seg_{spec.variant.value}")


def predict_probabilities(state: ModelState, image: np.ndarray) -> np.ndarray:
    """Per-pixel foreground probability, shape (H, W).

    Raises:
        ShapeError: If the image does not match the spec's input shape.
    """
    batch = images_to_tensor([image])
    check_input(batch, state.spec.input_shape)
    state.network.eval()
    with torch.no_grad():
        dtype = next(state.network.parameters()).dtype
        return state.network(batch.to(dtype))[0, 0].double().numpy()


def threshold_probabilities(probabilities: np.ndarray, threshold: float = settings.SEG_THRESHOLD) -> np.ndarray:
    return np.asarray(probabilities) > threshold


def segment(state: ModelState, image: np.ndarray, threshold: float = settings.SEG_THRESHOLD) -> np.ndarray:
    """Binary mask of pixels whose probability exceeds ``threshold``."""
    return threshold_probabilities(predict_probabilities(state, image), threshold)
