"""Seeded fan-in scaled initialization shared by both networks."""

import math

import torch
from torch import nn

_LAYERS = (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)


def fan_in(layer: nn.Module) -> int:
    """Inputs feeding one output unit of a linear, conv or transposed-conv layer."""
    weight = layer.weight
    receptive = math.prod(weight.shape[2:]) if weight.dim() > 2 else 1
    if isinstance(layer, nn.ConvTranspose2d):
        # weight layout is (in_channels, out_channels, kh, kw)
        return weight.shape[0] * receptive
    return weight.shape[1] * receptive


def init_parameters(network: nn.Module, seed: int) -> nn.Module:
    """
    Draw weights from U(-b, b) with b = sqrt(6 / fan_in) and zero every bias.

    Layers are visited in registration order with one generator, so the same
    architecture and seed always produce identical tensors.
    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in network.modules():
            if not isinstance(layer, _LAYERS):
                continue
            bound = math.sqrt(6.0 / fan_in(layer))
            layer.weight.uniform_(-bound, bound, generator=generator)
            if layer.bias is not None:
                layer.bias.zero_()
    return network
