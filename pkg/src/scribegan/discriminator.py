"""Image discriminator: seven down-sampling ResBlocks, self-attention between
blocks 3 and 4, a final non-resampling ResBlock, global sum pooling, and a
scalar projection. Spectrally normalized throughout; LeakyReLU activations.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import SelfAttention2d
from .spectral import SNConv2d, SNLinear, init_weights

DISC_CHANNELS = (1, 16, 16, 32, 64, 128, 128, 256)  # seven down blocks
FINAL_CHANNELS = 256
ATTENTION_AFTER_BLOCK = 3
LEAKY_SLOPE = 0.2


class DownResBlock(nn.Module):
    """BN -> LeakyReLU -> conv3x3 -> BN -> LeakyReLU -> conv3x3 -> avgpool x2,
    plus a skip (1x1 conv when channel counts differ, pooled when downsampling)."""

    def __init__(self, in_channels: int, out_channels: int, downsample: bool = True):
        super().__init__()
        self.downsample = downsample
        self.bn1 = nn.BatchNorm2d(in_channels)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.conv1 = SNConv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = SNConv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            SNConv2d(in_channels, out_channels, 1) if in_channels != out_channels else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.leaky_relu(self.bn1(x), LEAKY_SLOPE))
        h = self.conv2(F.leaky_relu(self.bn2(h), LEAKY_SLOPE))
        shortcut = x if self.skip is None else self.skip(x)
        if self.downsample:
            h = F.avg_pool2d(h, 2)
            shortcut = F.avg_pool2d(shortcut, 2)
        return h + shortcut


class Discriminator(nn.Module):
    def __init__(self, self_attention: bool = True):
        super().__init__()
        self.blocks = nn.ModuleList(
            DownResBlock(DISC_CHANNELS[i], DISC_CHANNELS[i + 1])
            for i in range(len(DISC_CHANNELS) - 1)
        )
        self.final_block = DownResBlock(FINAL_CHANNELS, FINAL_CHANNELS, downsample=False)
        self.attention = (
            SelfAttention2d(DISC_CHANNELS[ATTENTION_AFTER_BLOCK]) if self_attention else None
        )
        self.project = SNLinear(FINAL_CHANNELS, 1)
        init_weights(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Score a batch (B, 1, 128, 512) of images; returns (B,) unbounded reals."""
        if images.dim() != 4 or images.shape[1:] != (1, 128, 512):
            raise ValueError(
                f"expected images of shape (B, 1, 128, 512), got {tuple(images.shape)}"
            )
        h = images
        for i, block in enumerate(self.blocks):
            h = block(h)
            if self.attention is not None and i + 1 == ATTENTION_AFTER_BLOCK:
                h = self.attention(h)
        h = self.final_block(h)
        pooled = h.sum(dim=(2, 3))  # sum over horizontal and vertical dimensions
        return self.project(pooled).squeeze(1)
