"""Recurrent encoder for the character sequence to be rendered.

Each character is embedded in a 128-dimensional space and run through a
four-layer bidirectional LSTM with hidden size 128 per direction. The
encoder exposes both the per-step output sequence (L x 256) and a fixed-size
conditioning vector (256): the final forward hidden state concatenated with
the final backward hidden state of the top layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .spectral import init_weights

EMBED_DIM = 128
HIDDEN_DIM = 128
NUM_LAYERS = 4
COND_DIM = 2 * HIDDEN_DIM


@dataclass(frozen=True)
class TextEmbedding:
    steps: torch.Tensor  # (L, 256): forward 128 (+) backward 128 per character
    cond: torch.Tensor  # (256,): pooled summary used for conditioning


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int):
        super().__init__()
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, EMBED_DIM)
        self.lstm = nn.LSTM(
            EMBED_DIM,
            HIDDEN_DIM,
            num_layers=NUM_LAYERS,
            bidirectional=True,
            batch_first=True,
        )
        init_weights(self)

    def _check_labels(self, labels: torch.Tensor) -> None:
        if labels.numel() == 0:
            raise ValueError("cannot embed an empty label sequence")
        if int(labels.min()) < 0 or int(labels.max()) >= self.vocab_size:
            raise ValueError(
                f"labels must lie in [0, {self.vocab_size}), got range "
                f"[{int(labels.min())}, {int(labels.max())}]"
            )

    def forward(
        self, labels: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode a padded batch (B, Lmax) into steps (B, Lmax, 256) and cond (B, 256).

        Padded positions are masked out via packing, so each row matches the
        unbatched encoding of the same sequence.
        """
        if labels.dim() != 2:
            raise ValueError(f"expected (B, L) labels, got shape {tuple(labels.shape)}")
        batch, max_len = labels.shape
        if lengths is None:
            lengths = torch.full((batch,), max_len, dtype=torch.long)
        if (lengths < 1).any():
            raise ValueError("cannot embed an empty label sequence")
        for b in range(batch):
            self._check_labels(labels[b, : int(lengths[b])])

        embedded = self.embedding(labels)
        packed = nn.utils.rnn.pack_padded_sequence(
            embedded, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        steps, _ = nn.utils.rnn.pad_packed_sequence(
            out, batch_first=True, total_length=max_len
        )
        # cond is a function of the step outputs: last forward state, first
        # backward state of the top layer.
        last = (lengths - 1).to(steps.device).view(-1, 1, 1).expand(-1, 1, HIDDEN_DIM)
        fwd = steps[:, :, :HIDDEN_DIM].gather(1, last).squeeze(1)
        bwd = steps[:, 0, HIDDEN_DIM:]
        return steps, torch.cat([fwd, bwd], dim=1)

    def embed(self, labels: Sequence[int] | torch.Tensor) -> TextEmbedding:
        """Encode a single label sequence."""
        if not isinstance(labels, torch.Tensor):
            labels = torch.tensor(list(labels), dtype=torch.long)
        if labels.dim() != 1:
            raise ValueError(f"expected a 1-D label sequence, got shape {tuple(labels.shape)}")
        self._check_labels(labels)
        steps, cond = self.forward(labels.unsqueeze(0))
        return TextEmbedding(steps=steps[0], cond=cond[0])
