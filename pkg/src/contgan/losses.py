"""Component losses and the two-cycle training objectives.

The adversarial terms use the least-squares form. The generator/encoder
objective composes:

    cycle 1:  gan_cvae + lambda_image * L1(B, G(A, e(B))) + lambda_kl * KL
    cycle 2:  gan_clr + lambda_latent * L1(z, mu(G(A, z)))

The discriminator maximizes its adversarial parts; updates alternate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import torch
from torch import Tensor

from .data import PairedBatch
from .errors import ContractError
from .networks import ModelTriple, reparameterize


@dataclass
class LossWeights:
    lambda_image: float = 10.0
    lambda_kl: float = 0.01
    lambda_latent: float = 0.5
    beta: float = 5.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ContractError(f"loss weight {f.name} must be finite and >= 0")


@dataclass
class LossReport:
    gan_cvae: float = 0.0
    gan_clr: float = 0.0
    l1_image: float = 0.0
    kl: float = 0.0
    l1_latent: float = 0.0
    distill_cvae: float = 0.0
    distill_clr: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    COLUMNS = (
        "gan_cvae",
        "gan_clr",
        "l1_image",
        "kl",
        "l1_latent",
        "distill_cvae",
        "distill_clr",
        "total_g",
        "total_d",
    )

    def row(self) -> list[float]:
        return [getattr(self, c) for c in self.COLUMNS]


def _require_batch(batch) -> None:
    # Distillation-only inputs must never leak into the base objectives.
    if not isinstance(batch, PairedBatch):
        raise ContractError("cycle objectives accept PairedBatch only")


def l1_image_loss(b: Tensor, b_hat: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if b.shape != b_hat.shape:
        raise ContractError(f"image shapes differ: {tuple(b.shape)} vs {tuple(b_hat.shape)}")
    return (b - b_hat).abs().mean()


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, e^logvar) || N(0, I)); summed over dims, batch-averaged."""
    if mu.shape != logvar.shape:
        raise ContractError("mu/logvar length mismatch")
    per = 0.5 * (logvar.exp() + mu.pow(2) - 1.0 - logvar)
    if per.dim() == 1:
        return per.sum()
    return per.sum(dim=1).mean()


def gan_loss_d(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Least-squares critic loss: mean((real-1)^2) + mean(fake^2)."""
    return (real_logits - 1.0).pow(2).mean() + fake_logits.pow(2).mean()


def gan_loss_g(fake_logits: Tensor) -> Tensor:
    """Least-squares generator loss: mean((fake-1)^2)."""
    return (fake_logits - 1.0).pow(2).mean()


def latent_recovery_loss(z: Tensor, z_hat_mu: Tensor) -> Tensor:
    """Mean absolute difference between the prior draw and the recovered mean."""
    if z.shape != z_hat_mu.shape:
        raise ContractError("latent length mismatch")
    return (z - z_hat_mu).abs().mean()


@dataclass
class CycleOutput:
    """Generator-side scalars of one cycle plus the image for the D step."""

    g_loss: Tensor
    fake: Tensor
    parts: dict = field(default_factory=dict)


def cvae_gan_objective(
    model: ModelTriple, batch: PairedBatch, weights: LossWeights, eps: Tensor
) -> CycleOutput:
    """Encode B, reconstruct from (A, z~); adversarial + L1 + KL."""
    _require_batch(batch)
    mu, logvar = model.encoder(batch.targets)
    z_tilde = reparameterize(mu, logvar, eps)
    fake = model.generator(batch.conditions, z_tilde)
    gan = gan_loss_g(model.discriminator(batch.conditions, fake))
    l1 = l1_image_loss(batch.targets, fake)
    kl = kl_loss(mu, logvar)
    total = gan + weights.lambda_image * l1 + weights.lambda_kl * kl
    return CycleOutput(
        g_loss=total,
        fake=fake,
        parts={"gan_cvae": gan, "l1_image": l1, "kl": kl},
    )


def clr_gan_objective(
    model: ModelTriple, batch: PairedBatch, weights: LossWeights, z: Tensor
) -> CycleOutput:
    """Generate from a prior draw, recover the code; adversarial + latent L1."""
    _require_batch(batch)
    fake = model.generator(batch.conditions, z)
    gan = gan_loss_g(model.discriminator(batch.conditions, fake))
    mu_hat, _ = model.encoder(fake)
    l1z = latent_recovery_loss(z, mu_hat)
    total = gan + weights.lambda_latent * l1z
    return CycleOutput(
        g_loss=total,
        fake=fake,
        parts={"gan_clr": gan, "l1_latent": l1z},
    )


def discriminator_objective(
    model: ModelTriple, batch: PairedBatch, fake_cvae: Tensor, fake_clr: Tensor
) -> Tensor:
    """Least-squares D loss against the real pair and both cycle fakes."""
    real_logits = model.discriminator(batch.conditions, batch.targets)
    return gan_loss_d(real_logits, model.discriminator(batch.conditions, fake_cvae.detach())) + gan_loss_d(
        real_logits, model.discriminator(batch.conditions, fake_clr.detach())
    )


def bicycle_objective(
    model: ModelTriple,
    batch: PairedBatch,
    weights: LossWeights,
    eps: Tensor,
    z: Tensor,
) -> tuple[Tensor, LossReport, tuple[Tensor, Tensor]]:
    """Sum of both cycles. Returns (g_loss, report, (fake_cvae, fake_clr)).

    The report's total_d is filled by the caller's discriminator step.
    """
    cvae = cvae_gan_objective(model, batch, weights, eps)
    clr = clr_gan_objective(model, batch, weights, z)
    g_loss = cvae.g_loss + clr.g_loss
    report = LossReport(
        gan_cvae=float(cvae.parts["gan_cvae"].detach()),
        gan_clr=float(clr.parts["gan_clr"].detach()),
        l1_image=float(cvae.parts["l1_image"].detach()),
        kl=float(cvae.parts["kl"].detach()),
        l1_latent=float(clr.parts["l1_latent"].detach()),
        total_g=float(g_loss.detach()),
    )
    return g_loss, report, (cvae.fake, clr.fake)
