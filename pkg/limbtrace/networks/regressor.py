"""Convolutional backbone + dense head regressing one coordinate per branch per row."""

import torch
from torch import nn

from limbtrace.schemas.config import ModelSpec


class BranchRegressor(nn.Module):
    """
    Stride-2 conv blocks, flatten, hidden dense layers and a linear head.

    The head emits n_branches x height values reshaped to (n_branches, height);
    no output activation is applied.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.n_branches = spec.n_branches
        self.rows = spec.height

        blocks = []
        in_channels = spec.channels
        for out_channels in spec.backbone_channels:
            blocks.append(
                nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=2, padding=1, bias=spec.conv_bias)
            )
            blocks.append(nn.ReLU())
            in_channels = out_channels
        self.backbone = nn.Sequential(*blocks)

        channels, height, width = spec.feature_shape()
        features = channels * height * width
        dense = []
        for units in spec.dense_units:
            dense.append(nn.Linear(features, units))
            dense.append(nn.ReLU())
            features = units
        self.dense = nn.Sequential(*dense)
        self.head = nn.Linear(features, spec.output_units)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.backbone(x).flatten(1)
        return self.head(self.dense(features)).view(-1, self.n_branches, self.rows)
