"""Auxiliary batches for the distillation terms: montage, swap, and
previous-task label sampling.

Auxiliary data exists only to give teacher and student shared inputs that
are off the current task manifold; it never enters the base objectives.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
from torch import Tensor

from .data import NUM_CLASSES, ConditioningMode, PairedBatch
from .errors import ConfigurationError, ModeError, SequencingError


class Provenance(str, Enum):
    MONTAGE = "montage"
    SWAP = "swap"
    PREV_LABELS = "prev_labels"
    CURRENT = "current"  # conflicted configuration: aux == current batch


@dataclass
class AuxiliaryBatch:
    conditions: Tensor  # [N,C,H,W] or [N,label_dim]
    images: Tensor  # [N,C,H,W]
    provenance: Provenance

    def __post_init__(self) -> None:
        if len(self.conditions) != len(self.images):
            raise ConfigurationError("aux conditions/images length mismatch")

    def __len__(self) -> int:
        return len(self.images)


def _montage_plan(
    n_out: int, n_src: int, grid: int, max_offset: int, g: torch.Generator
) -> tuple[Tensor, Tensor, Tensor]:
    cells = n_out * grid * grid
    src = torch.randint(n_src, (cells,), generator=g)
    ys = torch.randint(max_offset + 1, (cells,), generator=g)
    xs = torch.randint(max_offset + 1, (cells,), generator=g)
    return src, ys, xs


def _apply_montage(images: Tensor, patch: int, grid: int, src: Tensor, ys: Tensor, xs: Tensor) -> Tensor:
    n_out = src.numel() // (grid * grid)
    out = images.new_empty((n_out, images.shape[1], grid * patch, grid * patch))
    k = 0
    for i in range(n_out):
        for gy in range(grid):
            for gx in range(grid):
                s, y, x = int(src[k]), int(ys[k]), int(xs[k])
                out[i, :, gy * patch : (gy + 1) * patch, gx * patch : (gx + 1) * patch] = images[
                    s, :, y : y + patch, x : x + patch
                ]
                k += 1
    return out


def montage(images: Tensor, patch_size: int, seed: int) -> Tensor:
    """Tile random verbatim patches of the inputs into same-size outputs."""
    n, _, h, w = images.shape
    if n == 0:
        raise ConfigurationError("montage needs a nonempty batch")
    if h != w or h % patch_size:
        raise ConfigurationError(f"patch_size {patch_size} must divide image size {h}")
    grid = h // patch_size
    g = torch.Generator().manual_seed(seed)
    src, ys, xs = _montage_plan(n, n, grid, h - patch_size, g)
    return _apply_montage(images, patch_size, grid, src, ys, xs)


def montage_pair(conditions: Tensor, targets: Tensor, patch_size: int, seed: int) -> tuple[Tensor, Tensor]:
    """Montage a paired batch with one shared patch plan so the auxiliary
    condition and image stay spatially aligned."""
    n, _, h, _ = conditions.shape
    if h != targets.shape[-1]:
        raise ConfigurationError("paired montage requires equal spatial sizes")
    if h % patch_size:
        raise ConfigurationError(f"patch_size {patch_size} must divide image size {h}")
    grid = h // patch_size
    g = torch.Generator().manual_seed(seed)
    src, ys, xs = _montage_plan(n, n, grid, h - patch_size, g)
    return (
        _apply_montage(conditions, patch_size, grid, src, ys, xs),
        _apply_montage(targets, patch_size, grid, src, ys, xs),
    )


def tile_channels(images: Tensor, channels: int) -> Tensor:
    """Repeat a 1-channel image to `channels`; no-op when already matching."""
    if images.shape[1] == channels:
        return images
    if images.shape[1] != 1:
        raise ConfigurationError(f"cannot tile {images.shape[1]} channels to {channels}")
    return images.expand(-1, channels, -1, -1).contiguous()


def swap(batch: PairedBatch) -> AuxiliaryBatch:
    """Exchange the roles of condition and ground truth.

    The former target is channel-tiled up to the condition's channel count;
    the former condition is passed through verbatim.
    """
    if batch.mode is not ConditioningMode.IMAGE:
        raise ModeError("swap is defined for image-conditioned batches only")
    return AuxiliaryBatch(
        conditions=tile_channels(batch.targets, batch.conditions.shape[1]),
        images=batch.conditions,
        provenance=Provenance.SWAP,
    )


def prev_label_batch(previous_class_sets: list[tuple[int, ...]], batch_size: int, seed: int) -> Tensor:
    """One-hot labels drawn uniformly over all previously seen classes."""
    if not previous_class_sets:
        raise SequencingError("no previous tasks to sample labels from")
    classes = sorted({c for s in previous_class_sets for c in s})
    g = torch.Generator().manual_seed(seed)
    picks = torch.randint(len(classes), (batch_size,), generator=g)
    labels = torch.tensor(classes)[picks]
    return torch.nn.functional.one_hot(labels, NUM_CLASSES).float()


def build_aux_batch(
    batch: PairedBatch,
    previous_class_sets: list[tuple[int, ...]],
    patch_size: int,
    seed: int,
    aux_mode: str = "both",
) -> AuxiliaryBatch:
    """Auxiliary batch for one iteration, sized like the training batch.

    Image-conditioned: montage and swap alternate 50/50 per iteration
    (`aux_mode` narrows this for ablations). Label-conditioned: conditions
    are previous-task labels and images are montages of current targets.
    """
    if batch.mode is ConditioningMode.LABEL:
        return AuxiliaryBatch(
            conditions=prev_label_batch(previous_class_sets, len(batch), seed),
            images=montage(batch.targets, patch_size, seed + 1),
            provenance=Provenance.PREV_LABELS,
        )
    if aux_mode == "current":
        return AuxiliaryBatch(batch.conditions, batch.targets, Provenance.CURRENT)
    if aux_mode == "montage_only":
        use_montage = True
    elif aux_mode == "swap_only":
        use_montage = False
    elif aux_mode == "both":
        g = torch.Generator().manual_seed(seed)
        use_montage = bool(torch.randint(2, (1,), generator=g).item())
    else:
        raise ConfigurationError(f"unknown aux_mode: {aux_mode}")
    if use_montage:
        conds, imgs = montage_pair(batch.conditions, batch.targets, patch_size, seed + 1)
        return AuxiliaryBatch(conds, imgs, Provenance.MONTAGE)
    return swap(batch)
