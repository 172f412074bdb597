"""
Branch-position regressor: build, run, train and gradient-check.

The network sees images scaled to [0, 1] and predicts coordinates divided by
(width - 1). Losses only count entries marked valid in the target.
"""

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from limbtrace.core.exceptions import EmptyLoss, ShapeError
from limbtrace.models.sample import Sample
from limbtrace.models.state import ModelState, TrainHistory
from limbtrace.models.target import PositionTarget
from limbtrace.networks.initialization import init_parameters
from limbtrace.networks.regressor import BranchRegressor
from limbtrace.schemas.config import ModelSpec, TrainConfig
from limbtrace.services.tensors import check_input, images_to_tensor, targets_to_tensors
from limbtrace.services.training import fit

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
# Denominator floor of the relative error
RELATIVE_FLOOR = 1e-5
MAX_BACKBONE_CHECKS = 64


@dataclass
class GradientCheckReport:
    """
    Outcome of comparing autograd gradients with central differences.

    Attributes:
        max_relative_error: Largest |a - n| / max(|a|, |n|, floor) over checked entries.
        checked: Number of parameter entries compared.
        skipped_kinks: Entries skipped because a perturbation flipped a ReLU.
        tolerance: Threshold the error is judged against.
        worst_entry: Parameter name and flat index of the largest error.
    """
    max_relative_error: float
    checked: int
    skipped_kinks: int
    tolerance: float
    worst_entry: str = ""

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def to_dict(self) -> Dict[str, object]:
        return {**asdict(self), "passed": self.passed}


def build_model(spec: ModelSpec) -> ModelState:
    """
    Instantiate the regressor with seeded fan-in uniform weights and zero biases.

    Raises:
        SpecMismatch: If the spec is inconsistent.
    """
    spec.check()
    network = init_parameters(BranchRegressor(spec), spec.seed)
    state = ModelState.fresh(spec, network)
    logger.debug("Built regressor with %s parameters", state.parameter_count())
    return state


def forward(state: ModelState, image_batch: torch.Tensor) -> torch.Tensor:
    """
    Run the network on a (B, C, H, W) batch scaled to [0, 1].

    Returns:
        (B, n_branches, height) normalized coordinates, unclamped.

    Raises:
        ShapeError: If the batch does not match the spec's input shape.
    """
    check_input(image_batch, state.spec.input_shape)
    dtype = next(state.network.parameters()).dtype
    return state.network(image_batch.to(dtype))


def mse_loss(pred: torch.Tensor, target_normalized: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
    """
    Mean squared error over valid entries only.

    Raises:
        ShapeError: If the three tensors do not share a shape.
        EmptyLoss: If no entry is valid.
    """
    valid_mask = torch.as_tensor(valid_mask, dtype=torch.bool)
    target_normalized = torch.as_tensor(target_normalized, dtype=pred.dtype)
    if pred.shape != target_normalized.shape or pred.shape != valid_mask.shape:
        raise ShapeError(
            f"prediction {tuple(pred.shape)}, target {tuple(target_normalized.shape)} "
            f"and mask {tuple(valid_mask.shape)} differ"
        )
    if not valid_mask.any():
        raise EmptyLoss("no valid entries to compute the loss over")
    return ((pred - target_normalized)[valid_mask] ** 2).mean()


def batch_loss(network: nn.Module, batch: Sequence[Sample]) -> torch.Tensor:
    dtype = next(network.parameters()).dtype
    images = images_to_tensor([s.image for s in batch], dtype)
    values, valid = targets_to_tensors([s.target for s in batch], dtype)
    return mse_loss(network(images), values, valid)


def loss_gradients(state: ModelState, batch: Sequence[Sample]) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Loss of ``batch`` and its gradient for every named parameter."""
    state.network.zero_grad()
    images = images_to_tensor([s.image for s in batch])
    check_input(images, state.spec.input_shape)
    loss = batch_loss(state.network, batch)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in state.network.named_parameters()
    }
    return float(loss), grads


def train(
    spec: ModelSpec,
    dataset: Sequence[Sample],
    config: TrainConfig,
    state: Optional[ModelState] = None,
) -> Tuple[ModelState, TrainHistory]:
    """
    Fit the regressor with masked MSE and Adam.

    Returns the state of the epoch with the lowest validation loss.

    Raises:
        ValidationError: If the dataset is empty.
        DivergenceDetected: If the loss or a gradient becomes non-finite.
    """
    state = state or build_model(spec)
    return fit(state, dataset, config, batch_loss, label="regressor")


def predict_positions(state: ModelState, image: np.ndarray) -> PositionTarget:
    """
    Predict every branch coordinate on every row of one image.

    Outputs are denormalized by (width - 1) and clamped to the canvas; every
    entry is valid by construction.

    Raises:
        ShapeError: If the image does not match the spec's input shape.
    """
    spec: ModelSpec = state.spec
    batch = images_to_tensor([image])
    check_input(batch, spec.input_shape)
    state.network.eval()
    with torch.no_grad():
        values = forward(state, batch)[0].double().numpy()
    return PositionTarget.from_normalized(values, width=spec.width, height=spec.height)


@contextmanager
def relu_patterns(network: nn.Module) -> Iterator[List[torch.Tensor]]:
    """Collect the active-unit pattern of every ReLU during the forward passes run inside the block."""
    patterns: List[torch.Tensor] = []
    handles = [
        module.register_forward_hook(lambda _m, _i, out: patterns.append(out > 0))
        for module in network.modules()
        if isinstance(module, nn.ReLU)
    ]
    try:
        yield patterns
    finally:
        for handle in handles:
            handle.remove()


def gradient_check(
    spec: ModelSpec,
    sample: Union[Sample, Sequence[Sample]],
    tolerance: float = 1e-4,
    state: Optional[ModelState] = None,
) -> GradientCheckReport:
    """
    Compare autograd gradients of mse_loss with central finite differences.

    Runs in float64 with step 1e-5. Every dense and head parameter is checked,
    plus up to 64 backbone entries sampled with the spec seed. Entries whose
    perturbation changes any ReLU activation pattern sit on a kink of the
    loss and are skipped (and counted) instead of compared.

    Failures are reported, never raised.
    """
    batch = [sample] if isinstance(sample, Sample) else list(sample)
    state = (state or build_model(spec)).clone().to(torch.float64)
    network = state.network
    _, analytic = loss_gradients(state, batch)

    def evaluate() -> Tuple[float, List[torch.Tensor]]:
        with torch.no_grad(), relu_patterns(network) as patterns:
            value = float(batch_loss(network, batch))
        return value, patterns

    _, reference = evaluate()
    params = state.parameters()
    entries = [
        (name, i)
        for name, p in params.items()
        if not name.startswith("backbone.")
        for i in range(p.numel())
    ]
    backbone = [(name, i) for name, p in params.items() if name.startswith("backbone.") for i in range(p.numel())]
    if backbone:
        rng = np.random.default_rng(spec.seed)
        picks = rng.choice(len(backbone), size=min(MAX_BACKBONE_CHECKS, len(backbone)), replace=False)
        entries += [backbone[i] for i in sorted(picks)]

    worst, worst_entry, skipped, checked = 0.0, "", 0, 0
    for name, index in entries:
        flat = params[name].data.view(-1)
        original = flat[index].item()
        flat[index] = original + FD_STEP
        plus, plus_patterns = evaluate()
        flat[index] = original - FD_STEP
        minus, minus_patterns = evaluate()
        flat[index] = original
        if not (_same(reference, plus_patterns) and _same(reference, minus_patterns)):
            skipped += 1
            continue
        numeric = (plus - minus) / (2.0 * FD_STEP)
        exact = analytic[name].view(-1)[index].item()
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
        checked += 1
        if error > worst:
            worst, worst_entry = error, f"{name}[{index}]"

    report = GradientCheckReport(worst, checked, skipped, tolerance, worst_entry)
    logger.info(
        "Gradient check: max relative error %.3e over %s entries (%s kinks skipped)",
        worst, checked, skipped,
    )
    return report


def _same(first: List[torch.Tensor], second: List[torch.Tensor]) -> bool:
    return len(first) == len(second) and all(torch.equal(a, b) for a, b in zip(first, second))
