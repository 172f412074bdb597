"""Adaptive-moment parameter update applied directly to a ModelState."""

import logging
from typing import Dict

import torch

from limbtrace.core.exceptions import DivergenceDetected, ShapeError
from limbtrace.models.state import ModelState
from limbtrace.schemas.config import TrainConfig

logger = logging.getLogger(__name__)


def adam_step(state: ModelState, gradients: Dict[str, torch.Tensor], config: TrainConfig) -> ModelState:
    """
    Apply one bias-corrected Adam update in place.

    m <- b1 m + (1 - b1) g, v <- b2 v + (1 - b2) g^2, then
    p <- p - lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m / (1 - b1^t)
    and v_hat = v / (1 - b2^t) at step t = step + 1.

    Raises:
        ShapeError: If a gradient is missing or its shape differs from the parameter.
        DivergenceDetected: If any gradient holds a non-finite value. The state
            is left untouched in both cases.
    """
    params = state.parameters()
    for name, param in params.items():
        grad = gradients.get(name)
        if grad is None or grad.shape != param.shape:
            raise ShapeError(f"gradient for {name} is missing or has the wrong shape")
        if not torch.isfinite(grad).all():
            logger.error("Non-finite gradient for %s at step %s", name, state.step + 1)
            raise DivergenceDetected(f"non-finite gradient for parameter {name}")

    t = state.step + 1
    correction1 = 1.0 - config.beta1 ** t
    correction2 = 1.0 - config.beta2 ** t
    with torch.no_grad():
        for name, param in params.items():
            grad = gradients[name].to(param.dtype)
            m = state.first_moments[name].mul_(config.beta1).add_(grad, alpha=1.0 - config.beta1)
            v = state.second_moments[name].mul_(config.beta2).addcmul_(grad, grad, value=1.0 - config.beta2)
            m_hat = m / correction1
            v_hat = v / correction2
            param.sub_(config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon))
    state.step = t
    return state
