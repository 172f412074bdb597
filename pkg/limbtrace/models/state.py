"""Learned parameters, optimizer moments and training history of a network."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import torch
from torch import nn

from limbtrace.schemas.config import ModelSpec, SegSpec


@dataclass
class ModelState:
    """
    A network together with its Adam accumulators.

    Attributes:
        spec: Layer configuration the network was built from.
        network: The torch module holding weight and bias tensors.
        first_moments: Adam first-moment estimate per parameter name.
        second_moments: Adam second-moment estimate per parameter name.
        step: Number of optimizer updates applied so far.
    """
    spec: Union[ModelSpec, SegSpec]
    network: nn.Module
    first_moments: Dict[str, torch.Tensor]
    second_moments: Dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def fresh(cls, spec: Union[ModelSpec, SegSpec], network: nn.Module) -> "ModelState":
        """Wrap a freshly initialised network with zeroed moments."""
        params = dict(network.named_parameters())
        return cls(
            spec=spec,
            network=network,
            first_moments={name: torch.zeros_like(p) for name, p in params.items()},
            second_moments={name: torch.zeros_like(p) for name, p in params.items()},
        )

    def parameters(self) -> Dict[str, torch.Tensor]:
        return dict(self.network.named_parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    def clone(self) -> "ModelState":
        return ModelState(
            spec=self.spec,
            network=copy.deepcopy(self.network),
            first_moments={k: v.clone() for k, v in self.first_moments.items()},
            second_moments={k: v.clone() for k, v in self.second_moments.items()},
            step=self.step,
        )

    def to(self, dtype: torch.dtype) -> "ModelState":
        """Cast parameters and moments in place (gradient checks run in float64)."""
        self.network.to(dtype)
        self.first_moments = {k: v.to(dtype) for k, v in self.first_moments.items()}
        self.second_moments = {k: v.to(dtype) for k, v in self.second_moments.items()}
        return self


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    validation_loss: float

    def to_dict(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "validation_loss": self.validation_loss}


@dataclass
class TrainHistory:
    """Per-epoch losses, the selected epoch and the ids that entered training batches."""
    epochs: List[EpochStats] = field(default_factory=list)
    best_epoch: Optional[int] = None
    seen_sample_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def validation_losses(self) -> List[float]:
        return [e.validation_loss for e in self.epochs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": [e.to_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "seen_sample_ids": list(self.seen_sample_ids),
        }
