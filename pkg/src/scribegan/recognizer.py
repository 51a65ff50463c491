"""Auxiliary text recognizer and the CTC loss it is trained with.

The encoder is five gated convolutional layers (tanh activations multiplied
by sigmoid convolutional gates); vertical max pooling collapses the
remaining height, and a two-layer bidirectional LSTM emits per-timestep
character logits over the codec vocabulary plus the CTC blank.

The CTC loss is computed in log space with the standard forward recursion,
guarded against underflow by log-sum-exp.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import CharCodec
from .spectral import init_weights

ENC_CHANNELS = (32, 64, 128, 128, 128)
ENC_V_STRIDES = (2, 2, 2, 2, 2)
ENC_H_STRIDES = (1, 1, 2, 2, 1)
LSTM_HIDDEN = 128
LSTM_LAYERS = 2

# Finite stand-in for log(0): keeps impossible alignment states out of the
# path sum without the NaN gradients that true -inf produces in logsumexp.
NEG_INF = -1e30


class GatedConv2d(nn.Module):
    """tanh(conv_a(x)) * sigmoid(conv_g(x)), elementwise."""

    def __init__(self, in_channels: int, out_channels: int, stride: tuple[int, int]):
        super().__init__()
        self.conv_a = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.conv_g = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.conv_a(x)) * torch.sigmoid(self.conv_g(x))


class Recognizer(nn.Module):
    def __init__(
        self,
        vocab_size: int,
        channels: Sequence[int] = ENC_CHANNELS,
        v_strides: Sequence[int] = ENC_V_STRIDES,
        h_strides: Sequence[int] = ENC_H_STRIDES,
    ):
        super().__init__()
        if not len(channels) == len(v_strides) == len(h_strides):
            raise ValueError("channels and stride lists must have equal length")
        self.vocab_size = vocab_size
        layers = []
        in_ch = 1
        for out_ch, vs, hs in zip(channels, v_strides, h_strides):
            layers.append(GatedConv2d(in_ch, out_ch, stride=(vs, hs)))
            in_ch = out_ch
        self.encoder = nn.Sequential(*layers)
        self.lstm = nn.LSTM(
            in_ch, LSTM_HIDDEN, num_layers=LSTM_LAYERS, bidirectional=True, batch_first=True
        )
        self.project = nn.Linear(2 * LSTM_HIDDEN, vocab_size + 1)
        self._width_factor = 1
        for hs in h_strides:
            self._width_factor *= hs
        init_weights(self)

    @property
    def num_frames(self) -> int:
        """Output sequence length for the fixed 512-pixel input width."""
        return 512 // self._width_factor

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Pre-pooling encoder activations (B, C, H', W'); also the FID feature tap."""
        if images.dim() != 4 or images.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) images, got {tuple(images.shape)}")
        return self.encoder(images)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Per-timestep logits (B, T, V+1); column V is the CTC blank."""
        feats = self.encode(images)
        collapsed = feats.amax(dim=2)  # max pooling on the vertical dimension
        seq = collapsed.transpose(1, 2)  # (B, T, C)
        out, _ = self.lstm(seq)
        return self.project(out)


def ctc_required_frames(labels: Sequence[int] | torch.Tensor) -> int:
    """Minimum frames for a label sequence: length plus blank separators for repeats."""
    labels = [int(v) for v in labels]
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss_batch(
    logits: torch.Tensor,
    labels: Sequence[Sequence[int] | torch.Tensor],
    blank: int,
) -> torch.Tensor:
    """Per-sample CTC losses for a batch of logit sequences (B, T, V+1).

    The loss is the negative log of the total probability, under per-frame
    softmax, of all frame alignments that collapse to the label sequence.
    """
    if logits.dim() != 3:
        raise ValueError(f"expected (B, T, C) logits, got shape {tuple(logits.shape)}")
    batch, t_frames, n_classes = logits.shape
    if len(labels) != batch:
        raise ValueError(f"{len(labels)} label sequences for a batch of {batch}")
    if not 0 <= blank < n_classes:
        raise ValueError(f"blank index {blank} outside [0, {n_classes})")

    label_lists = [[int(v) for v in seq] for seq in labels]
    for b, seq in enumerate(label_lists):
        if any(v == blank or not 0 <= v < n_classes for v in seq):
            raise ValueError(f"sample {b}: labels must lie in [0, {n_classes}) minus the blank")
        needed = ctc_required_frames(seq)
        if needed > t_frames:
            raise ValueError(
                f"sample {b}: label of length {len(seq)} needs {needed} frames "
                f"but only {t_frames} are available"
            )

    lengths = [len(seq) for seq in label_lists]
    s_max = 2 * max(lengths) + 1
    device, dtype = logits.device, logits.dtype

    # Extended sequence: blanks interleaved around each label.
    ext = torch.full((batch, s_max), blank, dtype=torch.long, device=device)
    can_skip = torch.zeros((batch, s_max), dtype=torch.bool, device=device)
    for b, seq in enumerate(label_lists):
        for i, v in enumerate(seq):
            s = 2 * i + 1
            ext[b, s] = v
            if i > 0 and seq[i - 1] != v:
                can_skip[b, s] = True

    log_probs = F.log_softmax(logits, dim=-1)
    frame_ext = log_probs.gather(2, ext.unsqueeze(1).expand(-1, t_frames, -1))  # (B, T, S)

    has_label = torch.tensor([n >= 1 for n in lengths], device=device)
    cols = [frame_ext[:, 0, 0].unsqueeze(1)]
    if s_max > 1:
        first_label = torch.where(
            has_label, frame_ext[:, 0, 1], torch.full_like(frame_ext[:, 0, 1], NEG_INF)
        )
        cols.append(first_label.unsqueeze(1))
    if s_max > 2:
        cols.append(torch.full((batch, s_max - 2), NEG_INF, dtype=dtype, device=device))
    alpha = torch.cat(cols, dim=1)

    pad = torch.full((batch, 1), NEG_INF, dtype=dtype, device=device)
    for t in range(1, t_frames):
        stay = alpha
        step = torch.cat([pad, alpha], dim=1)[:, :s_max]
        skip = torch.cat([pad, pad, alpha], dim=1)[:, :s_max]
        skip = torch.where(can_skip, skip, torch.full_like(skip, NEG_INF))
        alpha = frame_ext[:, t] + torch.logsumexp(torch.stack([stay, step, skip]), dim=0)

    idx = torch.tensor([[max(2 * n - 1, 0), 2 * n] for n in lengths], device=device)
    tails = alpha.gather(1, idx)
    # Empty label: the only terminal state is the single blank.
    empty = torch.tensor([n == 0 for n in lengths], device=device).unsqueeze(1)
    keep = torch.cat([~empty, torch.ones_like(empty)], dim=1)
    tails = torch.where(keep, tails, torch.full_like(tails, NEG_INF))
    return -torch.logsumexp(tails, dim=1)


def ctc_loss(
    logits: torch.Tensor,
    labels: Sequence[int] | torch.Tensor,
    blank: int | None = None,
) -> torch.Tensor:
    """CTC loss for one (T, V+1) logits sequence; blank defaults to the last column."""
    if logits.dim() != 2:
        raise ValueError(f"expected (T, C) logits, got shape {tuple(logits.shape)}")
    if blank is None:
        blank = logits.shape[1] - 1
    return ctc_loss_batch(logits.unsqueeze(0), [labels], blank)[0]


def collapse_ctc_labels(frame_labels: Sequence[int], blank: int) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for v in frame_labels:
        v = int(v)
        if v != prev and v != blank:
            out.append(v)
        prev = v
    return out


def greedy_decode(logits: torch.Tensor, codec: CharCodec) -> str | list[str]:
    """Best-path decoding: per-frame argmax, CTC collapse, then codec decode."""
    if logits.dim() == 2:
        frames = logits.argmax(dim=-1).tolist()
        return codec.decode(collapse_ctc_labels(frames, codec.blank_index))
    if logits.dim() == 3:
        return [greedy_decode(sample, codec) for sample in logits]
    raise ValueError(f"expected (T, C) or (B, T, C) logits, got shape {tuple(logits.shape)}")
