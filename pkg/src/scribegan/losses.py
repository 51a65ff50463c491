"""Adversarial losses and the gradient-balancing affine transform.

Three adversarial variants are supported: hinge (the default), the
non-saturating vanilla GAN loss, and least-squares. The balancing transform
re-statisticizes the recognizer's image gradient to the discriminator
gradient's elementwise mean and standard deviation, scaled by alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

ADV_VARIANTS = ("hinge", "vanilla", "lsgan")
SIGMA_FLOOR = 1e-12


class DegenerateGradientError(RuntimeError):
    """The recognizer gradient has (numerically) zero spread; balancing is undefined."""


def _check_variant(variant: str) -> None:
    if variant not in ADV_VARIANTS:
        raise ValueError(f"unknown adversarial loss {variant!r}; expected one of {ADV_VARIANTS}")


def d_loss_terms(
    real_scores: torch.Tensor, fake_scores: torch.Tensor, variant: str = "hinge"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator loss split into its real and fake terms."""
    _check_variant(variant)
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("score vectors must be nonempty")
    if variant == "hinge":
        return F.relu(1.0 - real_scores).mean(), F.relu(1.0 + fake_scores).mean()
    if variant == "vanilla":
        return F.softplus(-real_scores).mean(), F.softplus(fake_scores).mean()
    return 0.5 * ((real_scores - 1.0) ** 2).mean(), 0.5 * (fake_scores**2).mean()


def hinge_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean max(0, 1 - D(real)) + mean max(0, 1 + D(fake))."""
    real_term, fake_term = d_loss_terms(real_scores, fake_scores, "hinge")
    return real_term + fake_term


def adversarial_d_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor, variant: str = "hinge"
) -> torch.Tensor:
    real_term, fake_term = d_loss_terms(real_scores, fake_scores, variant)
    return real_term + fake_term


def adversarial_g_loss(fake_scores: torch.Tensor, variant: str = "hinge") -> torch.Tensor:
    """Generator-side adversarial loss on fake scores."""
    _check_variant(variant)
    if fake_scores.numel() == 0:
        raise ValueError("score vector must be nonempty")
    if variant == "hinge":
        return -fake_scores.mean()
    if variant == "vanilla":
        return F.softplus(-fake_scores).mean()  # non-saturating -log sigmoid(D(fake))
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


@dataclass(frozen=True)
class GradientBalanceReport:
    """Statistics of the two image-gradient signals and the transformed result."""

    mu_d: float
    sigma_d: float
    mu_r: float
    sigma_r: float
    alpha: float | None
    norm_ratio: float  # ||grad_R|| / ||grad_D|| before the transform
    balanced: torch.Tensor

    @property
    def sigma_ratio(self) -> float:
        return self.sigma_r / max(self.sigma_d, SIGMA_FLOOR)


def balance_gradients(
    grad_r: torch.Tensor, grad_d: torch.Tensor, alpha: float | None
) -> torch.Tensor:
    """alpha * ((sigma_D / sigma_R) * (grad_R - mu_R) + mu_D), elementwise stats.

    Statistics are taken over the whole tensor. ``alpha=None`` disables the
    transform and returns ``grad_r`` unchanged.
    """
    if grad_r.shape != grad_d.shape:
        raise ValueError(
            f"gradient shapes differ: {tuple(grad_r.shape)} vs {tuple(grad_d.shape)}"
        )
    if alpha is None:
        return grad_r
    sigma_r = grad_r.std(unbiased=False)
    if float(sigma_r) < SIGMA_FLOOR:
        raise DegenerateGradientError(
            f"recognizer gradient std {float(sigma_r):.3e} is below {SIGMA_FLOOR:.0e}"
        )
    mu_r = grad_r.mean()
    mu_d = grad_d.mean()
    sigma_d = grad_d.std(unbiased=False)
    return alpha * ((sigma_d / sigma_r) * (grad_r - mu_r) + mu_d)


def balance_report(
    grad_r: torch.Tensor, grad_d: torch.Tensor, alpha: float | None
) -> GradientBalanceReport:
    """Run the balancing transform and capture the monitoring statistics."""
    balanced = balance_gradients(grad_r, grad_d, alpha)
    norm_d = float(grad_d.norm())
    return GradientBalanceReport(
        mu_d=float(grad_d.mean()),
        sigma_d=float(grad_d.std(unbiased=False)),
        mu_r=float(grad_r.mean()),
        sigma_r=float(grad_r.std(unbiased=False)),
        alpha=alpha,
        norm_ratio=float(grad_r.norm()) / max(norm_d, SIGMA_FLOOR),
        balanced=balanced,
    )
