"""Image generator: noise chunking, CBN-conditioned up-sampling ResBlocks,
self-attention, and a tanh head producing 1x128x512 images.

The 128-dimensional noise vector is split into eight 16-dimensional chunks.
Chunk 0 feeds a linear stem reshaped to 256x1x4; chunks 1..7 are each
concatenated with the 256-dim text conditioning vector and injected into one
ResBlock through its conditional batch-norm layers. Every block upsamples
x2 (nearest neighbor), so seven blocks take 1x4 to 128x512. Alternatively
(`conditioning="first_linear"`), the whole noise vector concatenated with
the conditioning vector feeds the stem and all batch norms are standard.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .spectral import SNConv2d, SNLinear, init_weights

NOISE_DIM = 128
NOISE_CHUNKS = 8
CHUNK_DIM = NOISE_DIM // NOISE_CHUNKS
GEN_CHANNELS = (256, 256, 128, 128, 64, 32, 16, 16)  # stem output + seven block outputs
STEM_SHAPE = (256, 1, 4)
CBN_HIDDEN = 512
ATTENTION_AFTER_BLOCK = 4  # self-attention sits between blocks 4 and 5
CONDITIONING_MODES = ("cbn", "first_linear")


def split_noise(z: torch.Tensor) -> list[torch.Tensor]:
    """Split (..., 128) noise into eight contiguous 16-dim chunks."""
    if z.shape[-1] != NOISE_DIM:
        raise ValueError(f"noise must have dimension {NOISE_DIM}, got {z.shape[-1]}")
    return list(z.split(CHUNK_DIM, dim=-1))


class ConditionalBatchNorm2d(nn.Module):
    """Batch norm whose per-channel scale and shift come from a conditioning vector.

    gamma is parameterized as ``1 + dgamma(cond)`` so zeroing the output
    layer of the one-hidden-layer (512 unit) network reduces the module to
    plain batch normalization.
    """

    def __init__(self, num_features: int, cond_dim: int):
        super().__init__()
        self.num_features = num_features
        self.bn = nn.BatchNorm2d(num_features, affine=False)
        self.hidden = SNLinear(cond_dim, CBN_HIDDEN)
        self.out = SNLinear(CBN_HIDDEN, 2 * num_features)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[0] != x.shape[0] or cond.dim() != 2:
            raise ValueError(
                f"condition batch {tuple(cond.shape)} does not match features "
                f"{tuple(x.shape)}"
            )
        dgamma, beta = self.out(F.relu(self.hidden(cond))).chunk(2, dim=1)
        gamma = (1.0 + dgamma).unsqueeze(-1).unsqueeze(-1)
        return gamma * self.bn(x) + beta.unsqueeze(-1).unsqueeze(-1)


class UpResBlock(nn.Module):
    """CBN -> ReLU -> upsample -> conv3x3 -> CBN -> ReLU -> conv3x3, plus an
    upsampled skip (1x1 conv only when channel counts differ)."""

    def __init__(self, in_channels: int, out_channels: int, cond_dim: int | None):
        super().__init__()
        self.conditional = cond_dim is not None
        if self.conditional:
            self.bn1 = ConditionalBatchNorm2d(in_channels, cond_dim)
            self.bn2 = ConditionalBatchNorm2d(out_channels, cond_dim)
        else:
            self.bn1 = nn.BatchNorm2d(in_channels)
            self.bn2 = nn.BatchNorm2d(out_channels)
        self.conv1 = SNConv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = SNConv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            SNConv2d(in_channels, out_channels, 1) if in_channels != out_channels else None
        )

    def _norm(self, bn, x, cond):
        return bn(x, cond) if self.conditional else bn(x)

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        h = F.relu(self._norm(self.bn1, x, cond))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = F.relu(self._norm(self.bn2, h, cond))
        h = self.conv2(h)
        shortcut = F.interpolate(x, scale_factor=2, mode="nearest")
        if self.skip is not None:
            shortcut = self.skip(shortcut)
        return h + shortcut


class SelfAttention2d(nn.Module):
    """Residual softmax attention over all spatial positions, gated by a
    learned scalar initialized to zero (so the layer starts as identity)."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        inner = max(channels // reduction, 1)
        self.query = SNConv2d(channels, inner, 1, bias=False)
        self.key = SNConv2d(channels, inner, 1, bias=False)
        self.value = SNConv2d(channels, channels, 1, bias=False)
        self.gamma = nn.Parameter(torch.zeros(()))

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, N) attention map; row i holds query position i's weights."""
        b, _, h, w = x.shape
        n = h * w
        q = self.query(x).flatten(2).transpose(1, 2)  # (B, N, C')
        k = self.key(x).flatten(2)  # (B, C', N)
        return torch.softmax(torch.bmm(q, k), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        attn = self.attention_weights(x)
        v = self.value(x).flatten(2)  # (B, C, N)
        out = torch.bmm(v, attn.transpose(1, 2)).view(b, c, h, w)
        return x + self.gamma * out


class Generator(nn.Module):
    def __init__(
        self,
        cond_dim: int = 256,
        self_attention: bool = True,
        conditioning: str = "cbn",
    ):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise ValueError(
                f"conditioning must be one of {CONDITIONING_MODES}, got {conditioning!r}"
            )
        self.cond_dim = cond_dim
        self.conditioning = conditioning
        stem_in = CHUNK_DIM if conditioning == "cbn" else NOISE_DIM + cond_dim
        stem_out = STEM_SHAPE[0] * STEM_SHAPE[1] * STEM_SHAPE[2]
        self.stem = SNLinear(stem_in, stem_out)
        block_cond = CHUNK_DIM + cond_dim if conditioning == "cbn" else None
        self.blocks = nn.ModuleList(
            UpResBlock(GEN_CHANNELS[i], GEN_CHANNELS[i + 1], block_cond)
            for i in range(NOISE_CHUNKS - 1)
        )
        self.attention = SelfAttention2d(GEN_CHANNELS[ATTENTION_AFTER_BLOCK]) if self_attention else None
        self.head = SNConv2d(GEN_CHANNELS[-1], 1, 3, padding=1)
        init_weights(self)

    def forward(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """Map noise (B, 128) and conditioning vectors (B, 256) to images (B, 1, 128, 512)."""
        if z.dim() != 2 or cond.dim() != 2 or z.shape[0] != cond.shape[0]:
            raise ValueError(
                f"expected matching (B, {NOISE_DIM}) noise and (B, {self.cond_dim}) "
                f"condition, got {tuple(z.shape)} and {tuple(cond.shape)}"
            )
        if cond.shape[1] != self.cond_dim:
            raise ValueError(f"condition dimension {cond.shape[1]} != {self.cond_dim}")
        chunks = split_noise(z)
        if self.conditioning == "cbn":
            h = self.stem(chunks[0])
            block_conds = [torch.cat([chunk, cond], dim=1) for chunk in chunks[1:]]
        else:
            h = self.stem(torch.cat([z, cond], dim=1))
            block_conds = [None] * (NOISE_CHUNKS - 1)
        h = h.view(z.shape[0], *STEM_SHAPE)
        for i, block in enumerate(self.blocks):
            h = block(h, block_conds[i])
            if self.attention is not None and i + 1 == ATTENTION_AFTER_BLOCK:
                h = self.attention(h)
        return torch.tanh(self.head(h))
