"""Small U-Net style encoder-decoder with skip concatenation."""

import torch
from torch import nn

from limbtrace.schemas.config import SegSpec


def conv_block(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(out_channels, out_channels, 3, padding=1),
        nn.ReLU(),
    )


class SegmentationUNet(nn.Module):
    """
    Encoder of ``depth`` conv blocks with 2x2 max-pooling, a bottleneck block,
    and a mirrored decoder that upsamples with 2x2 transposed convolutions and
    concatenates the encoder features of matching resolution. A 1x1 conv and a
    sigmoid produce one probability per pixel.
    """

    def __init__(self, spec: SegSpec):
        super().__init__()
        self.encoders = nn.ModuleList()
        previous = spec.channels
        for width in spec.encoder_channels:
            self.encoders.append(conv_block(previous, width))
            previous = width
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = conv_block(previous, spec.bottleneck)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        previous = spec.bottleneck
        for width in reversed(spec.encoder_channels):
            self.upsamplers.append(nn.ConvTranspose2d(previous, width, kernel_size=2, stride=2))
            self.decoders.append(conv_block(2 * width, width))
            previous = width
        self.final = nn.Conv2d(previous, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for upsample, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = decoder(torch.cat([upsample(x), skip], dim=1))
        return torch.sigmoid(self.final(x))
