"""Spectral normalization for conv and linear layers.

The weight used in the forward pass is ``W / sigma`` where ``sigma``
estimates the top singular value of the weight reshaped to 2-D. One power
iteration runs per training-mode forward; the iteration vectors are
registered buffers, so they persist through checkpoints. ``refresh_``
lets the training step tighten the estimate after an optimizer update,
when the stored weight has moved but the vectors have not.
"""

from __future__ import annotations

from typing import Iterator

import torch
import torch.nn as nn
import torch.nn.functional as F

_EPS = 1e-12


class _SpectralNormMixin:
    """Power-iteration machinery shared by SNConv2d and SNLinear."""

    weight: torch.Tensor
    weight_u: torch.Tensor
    weight_v: torch.Tensor

    def _init_power_vectors(self) -> None:
        mat = self.weight.detach().flatten(1)
        self.register_buffer("weight_u", F.normalize(torch.randn(mat.shape[0]), dim=0))
        self.register_buffer("weight_v", F.normalize(torch.randn(mat.shape[1]), dim=0))

    @torch.no_grad()
    def _power_iteration(self, mat: torch.Tensor, steps: int = 1) -> None:
        u, v = self.weight_u, self.weight_v
        for _ in range(steps):
            v = F.normalize(mat.t().mv(u), dim=0, eps=_EPS)
            u = F.normalize(mat.mv(v), dim=0, eps=_EPS)
        self.weight_u.copy_(u)
        self.weight_v.copy_(v)

    def normalized_weight(self) -> torch.Tensor:
        mat = self.weight.flatten(1)
        if self.training:
            self._power_iteration(mat.detach())
        # ||W v|| equals u^T W v once u has been updated from v, and stays
        # nonnegative with stale vectors; the floor keeps an all-zero weight
        # (sigma 0) finite instead of dividing 0 by 0. The clone decouples
        # this graph from in-place buffer updates in later forward passes.
        sigma = mat.mv(self.weight_v.clone()).norm()
        return self.weight / sigma.clamp_min(_EPS)

    @torch.no_grad()
    def refresh_(self, max_sweeps: int = 100) -> float:
        """Re-estimate sigma against the current weight.

        A single persisted vector can lock onto a singular direction that
        another direction has since overtaken, so the refresh runs
        simultaneous (block) power iteration: the persisted vector plus
        deterministic probes, re-orthonormalized every sweep. The dominant
        pair of the converged block lands back in the buffers.
        """
        mat = self.weight.detach().flatten(1)
        u, v, sigma = _converge_block(mat, self.weight_u, max_sweeps)
        if sigma > 0.0:
            self.weight_u.copy_(u)
            self.weight_v.copy_(v)
        return sigma


@torch.no_grad()
def _converge_block(
    mat: torch.Tensor,
    warm_u: torch.Tensor,
    max_sweeps: int,
    block: int = 4,
    rtol: float = 1e-9,
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Simultaneous power iteration for the top singular triple of ``mat``.

    The start block holds the warm-start vector, a probe derived from the
    weight itself, and fixed pseudorandom directions (seeded by the matrix
    shape, so the refresh stays deterministic across runs). Tracking
    several directions at once makes the top estimate converge at the
    sigma_{block+1}/sigma_1 rate and survive singular-value crossings.
    """
    out_dim, in_dim = mat.shape
    k = min(block, out_dim, in_dim)
    gen = torch.Generator().manual_seed((out_dim * 2654435761 + in_dim * 40503) % 2**31)
    columns = [warm_u.clone(), F.normalize(mat.mv(mat.sum(dim=0)), dim=0, eps=_EPS)]
    while len(columns) < k:
        columns.append(
            F.normalize(
                torch.randn(out_dim, generator=gen, dtype=mat.dtype, device=mat.device),
                dim=0,
                eps=_EPS,
            )
        )
    u_block, _ = torch.linalg.qr(torch.stack(columns[:k], dim=1))

    sigma = 0.0
    u = warm_u
    v = F.normalize(mat.t().mv(warm_u), dim=0, eps=_EPS)
    for _ in range(max_sweeps):
        z = mat.t() @ u_block  # (in, k)
        v_block, _ = torch.linalg.qr(z)
        y = mat @ v_block  # (out, k)
        norms = y.norm(dim=0)
        top = int(norms.argmax())
        sigma = float(norms[top])
        v = v_block[:, top]
        u = y[:, top] / max(sigma, _EPS)
        u_block, _ = torch.linalg.qr(y)
        residual = float((mat.t().mv(u) - sigma * v).norm())
        if residual <= rtol * max(sigma, _EPS) + _EPS:
            break
    return u, v, sigma


class SNConv2d(nn.Conv2d, _SpectralNormMixin):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_power_vectors()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self.normalized_weight(), self.bias)


class SNLinear(nn.Linear, _SpectralNormMixin):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_power_vectors()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.normalized_weight(), self.bias)


def spectral_layers(module: nn.Module) -> Iterator[tuple[str, _SpectralNormMixin]]:
    """Named spectrally-normalized layers of a network, for upkeep and audits."""
    for name, child in module.named_modules():
        if isinstance(child, _SpectralNormMixin):
            yield name, child


def refresh_spectral_(module: nn.Module, max_sweeps: int = 100) -> None:
    """Post-optimizer-step upkeep: re-estimate sigma for every SN layer."""
    for _, layer in spectral_layers(module):
        layer.refresh_(max_sweeps=max_sweeps)


def init_weights(module: nn.Module) -> None:
    """Orthogonal init for convs and linears, N(0, 0.02) for embeddings."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.orthogonal_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)
    for _, layer in spectral_layers(module):
        layer.refresh_(max_sweeps=20)
