"""Teacher-student distillation losses and combined objectives.

All distillation terms are L1 (squared error would blur generated
images). Teacher passes run without gradients; the student discriminator
never appears in a distillation term.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .auxdata import AuxiliaryBatch, Provenance, tile_channels
from .data import PairedBatch
from .errors import ContractError, SequencingError
from .losses import LossReport, LossWeights, bicycle_objective
from .networks import ModelTriple


@dataclass
class TeacherStudentPair:
    teacher: ModelTriple  # frozen previous-stage model
    student: ModelTriple  # trainable current model

    def __post_init__(self) -> None:
        if not self.teacher.frozen:
            raise ContractError("teacher must be a frozen snapshot")
        if self.teacher.config != self.student.config:
            raise ContractError("teacher/student configs differ")


def _as_encoder_input(images: Tensor, cfg) -> Tensor:
    """Adapt auxiliary images to the encoder's channel count.

    Swap puts the former (multi-channel) condition on the image side; the
    encoder sees its channel max, which preserves foreground structure.
    """
    want = cfg.out_channels
    have = images.shape[1]
    if have == want:
        return images
    if have == 1:
        return tile_channels(images, want)
    return images.max(dim=1, keepdim=True).values


def cvae_distill_loss(pair: TeacherStudentPair, aux: AuxiliaryBatch) -> Tensor:
    """Encoder-path distillation: match mu heads on aux images and the
    reconstructions generated from each model's own encoding."""
    if len(aux) == 0:
        raise ContractError("empty auxiliary batch")
    t, s = pair.teacher, pair.student
    b_aux = _as_encoder_input(aux.images, s.config)
    mu_s, _ = s.encoder(b_aux)
    with torch.no_grad():
        mu_t, _ = t.encoder(b_aux)
        recon_t = t.generator(aux.conditions, mu_t)
    recon_s = s.generator(aux.conditions, mu_s)
    return (mu_s - mu_t).abs().mean() + (recon_s - recon_t).abs().mean()


def clr_distill_loss(pair: TeacherStudentPair, aux: AuxiliaryBatch, z: Tensor) -> Tensor:
    """Generator-path distillation with a z draw shared by both models."""
    if len(aux) == 0:
        raise ContractError("empty auxiliary batch")
    t, s = pair.teacher, pair.student
    gen_s = s.generator(aux.conditions, z)
    with torch.no_grad():
        gen_t = t.generator(aux.conditions, z)
        mu_t, _ = t.encoder(gen_t)
    mu_s, _ = s.encoder(gen_s)
    return (gen_s - gen_t).abs().mean() + (mu_s - mu_t).abs().mean()


def lifelong_objective(
    pair: TeacherStudentPair,
    batch: PairedBatch,
    aux: AuxiliaryBatch,
    weights: LossWeights,
    eps: Tensor,
    z: Tensor,
    z_distill: Tensor,
) -> tuple[Tensor, LossReport, tuple[Tensor, Tensor]]:
    """Both cycles on current data plus beta-weighted distillation on aux."""
    g_loss, report, fakes = bicycle_objective(pair.student, batch, weights, eps, z)
    d_cvae = cvae_distill_loss(pair, aux)
    d_clr = clr_distill_loss(pair, aux, z_distill)
    g_loss = g_loss + weights.beta * (d_cvae + d_clr)
    report.distill_cvae = float(d_cvae.detach())
    report.distill_clr = float(d_clr.detach())
    report.total_g = float(g_loss.detach())
    return g_loss, report, fakes


def conflicted_objective(
    pair: TeacherStudentPair,
    batch: PairedBatch,
    weights: LossWeights,
    eps: Tensor,
    z: Tensor,
    z_distill: Tensor,
) -> tuple[Tensor, LossReport, tuple[Tensor, Tensor]]:
    """Distillation with aux = the current batch itself.

    Exists to demonstrate the conflict between mimicking the teacher and
    fitting the current task on the same inputs; not a training strategy
    of merit.
    """
    aux = AuxiliaryBatch(batch.conditions, batch.targets, Provenance.CURRENT)
    return lifelong_objective(pair, batch, aux, weights, eps, z, z_distill)


def check_task_one_has_no_teacher(task_id: int, teacher: ModelTriple | None) -> None:
    if task_id == 1 and teacher is not None:
        raise SequencingError("task 1 trains without a teacher")
    if task_id >= 2 and teacher is None:
        raise SequencingError(f"task {task_id} requires a teacher snapshot")
