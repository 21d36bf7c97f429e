"""Digit ingestion and task-sequence construction.

Reads standard IDX image/label files, builds the two in-scope task
sequences (dyed-digit segmentation, label-conditioned generation) and
serves deterministic batch streams.

Tensor conventions: images are float32 NCHW in [-1, 1]; labels are
one-hot float vectors of length 10.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np
import torch
from torch import Tensor

from .errors import ConfigurationError, FormatError, IngestionError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

IMAGE_SIZE = 64
NUM_CLASSES = 10

# Signature foreground colors per segmentation task, in [-1, 1] RGB.
DYE_PALETTE = {
    1: (1.0, -1.0, -1.0),
    2: (-1.0, 1.0, -1.0),
    3: (-1.0, -1.0, 1.0),
}

SEGMENTATION_GROUPS = [(0, 1, 2), (3, 4, 5), (6, 7, 8, 9)]
LABEL_GROUPS = [(0, 1, 2), (3, 4), (5, 6, 7), (8, 9)]


class ConditioningMode(str, Enum):
    IMAGE = "image_conditioned"
    LABEL = "label_conditioned"


class Strategy(str, Enum):
    SFT = "sft"
    JL = "jl"
    MR = "mr"
    LIFELONG = "lifelong"
    CONFLICTED = "conflicted"


@dataclass
class TaskSpec:
    """One stage of a sequence: a class subset plus its paired dataset."""

    task_id: int
    class_set: tuple[int, ...]
    mode: ConditioningMode
    conditions: Tensor  # [N,3,H,W] for IMAGE mode, [N,10] for LABEL mode
    targets: Tensor  # [N,1,H,W]
    digit_labels: Tensor  # [N] int64

    def __post_init__(self) -> None:
        if len(self.conditions) != len(self.targets):
            raise ConfigurationError("conditions/targets length mismatch")
        if len(self.targets) == 0:
            raise ConfigurationError("task dataset must be nonempty")

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class PairedBatch:
    """A minibatch of paired samples in the same layout as TaskSpec."""

    mode: ConditioningMode
    conditions: Tensor
    targets: Tensor
    digit_labels: Tensor

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class TaskSequence:
    tasks: list[TaskSpec]
    strategy: Strategy
    seed: int

    def __post_init__(self) -> None:
        ids = [t.task_id for t in self.tasks]
        if ids != list(range(1, len(self.tasks) + 1)):
            raise ConfigurationError(f"task_ids must be 1..{len(self.tasks)}, got {ids}")
        seen: set[int] = set()
        for t in self.tasks:
            overlap = seen.intersection(t.class_set)
            if overlap:
                raise ConfigurationError(f"class sets overlap on {sorted(overlap)}")
            seen.update(t.class_set)


def _read_idx(path: str, expected_magic: int) -> np.ndarray:
    if not os.path.exists(path):
        raise IngestionError(f"missing IDX file: {path}")
    with open(path, "rb") as f:
        header = f.read(4)
        if len(header) < 4:
            raise FormatError(f"truncated IDX header in {path}")
        (magic,) = struct.unpack(">i", header)
        if magic != expected_magic:
            raise FormatError(
                f"bad IDX magic in {path}: got {magic:#010x}, want {expected_magic:#010x}"
            )
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}i", f.read(4 * ndim))
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise FormatError(f"IDX payload size mismatch in {path}")
    return data.reshape(dims)


def idx_count(path: str, kind: str = "images") -> int:
    """Number of records announced by the IDX header."""
    magic = IMAGE_MAGIC if kind == "images" else LABEL_MAGIC
    return int(_read_idx(path, magic).shape[0])


def load_mnist(path: str, split: str) -> tuple[Tensor, Tensor]:
    """Load one IDX split as (images [N,1,28,28] in [-1,1], labels [N]).

    File names follow the standard convention
    ``{train,t10k}-images-idx3-ubyte`` / ``...-labels-idx1-ubyte``.
    """
    if split not in ("train", "test"):
        raise ConfigurationError(f"unknown split: {split}")
    prefix = "train" if split == "train" else "t10k"
    images = _read_idx(os.path.join(path, f"{prefix}-images-idx3-ubyte"), IMAGE_MAGIC)
    labels = _read_idx(os.path.join(path, f"{prefix}-labels-idx1-ubyte"), LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image/label counts disagree")
    x = torch.from_numpy(images.astype(np.float32) / 255.0 * 2.0 - 1.0).unsqueeze(1)
    y = torch.from_numpy(labels.astype(np.int64))
    return x, y


def resize_nearest(images: Tensor, size: int = IMAGE_SIZE) -> Tensor:
    """Nearest-neighbor upscale; keeps binary images binary."""
    return torch.nn.functional.interpolate(images, size=(size, size), mode="nearest")


def binarize(images: Tensor, threshold: float = 0.0) -> Tensor:
    """Threshold to a {-1, 1} foreground mask."""
    return torch.where(images > threshold, 1.0, -1.0)


def dye_digit(binary_digit: Tensor, task_id: int) -> Tensor:
    """Color the foreground of a {-1,1} mask with the task's signature color.

    Accepts [1,H,W] or [N,1,H,W]; returns the same rank with 3 channels.
    Background stays black (-1,-1,-1).
    """
    if task_id not in DYE_PALETTE:
        raise ConfigurationError(f"no signature color for task {task_id}")
    single = binary_digit.dim() == 3
    x = binary_digit.unsqueeze(0) if single else binary_digit
    fg = (x > 0).expand(-1, 3, -1, -1)
    color = torch.tensor(DYE_PALETTE[task_id], dtype=x.dtype).view(1, 3, 1, 1).expand_as(fg)
    out = torch.where(fg, color, torch.tensor(-1.0, dtype=x.dtype))
    return out.squeeze(0) if single else out


def _group_indices(labels: Tensor, classes: Sequence[int], per_task_cap: int | None) -> Tensor:
    mask = torch.zeros_like(labels, dtype=torch.bool)
    for c in classes:
        mask |= labels == c
    idx = torch.nonzero(mask, as_tuple=False).squeeze(1)
    if per_task_cap is not None:
        idx = idx[:per_task_cap]
    return idx


def build_segmentation_tasks(
    images: Tensor,
    labels: Tensor,
    strategy: Strategy = Strategy.SFT,
    seed: int = 0,
    samples_per_task: int | None = None,
) -> TaskSequence:
    """Three dyed-digit segmentation tasks over groups {0-2},{3-5},{6-9}.

    Condition: digit mask dyed with the task color (3 channels).
    Target: binary foreground mask (1 channel).
    """
    if len(images) == 0:
        raise ConfigurationError("empty dataset")
    big = binarize(resize_nearest(images))
    tasks = []
    for i, group in enumerate(SEGMENTATION_GROUPS, start=1):
        idx = _group_indices(labels, group, samples_per_task)
        masks = big[idx]
        tasks.append(
            TaskSpec(
                task_id=i,
                class_set=tuple(group),
                mode=ConditioningMode.IMAGE,
                conditions=dye_digit(masks, i),
                targets=masks,
                digit_labels=labels[idx],
            )
        )
    return TaskSequence(tasks=tasks, strategy=strategy, seed=seed)


def build_label_tasks(
    images: Tensor,
    labels: Tensor,
    strategy: Strategy = Strategy.SFT,
    seed: int = 0,
    samples_per_task: int | None = None,
) -> TaskSequence:
    """Four label-conditioned generation tasks over {0-2},{3,4},{5-7},{8,9}."""
    if len(images) == 0:
        raise ConfigurationError("empty dataset")
    big = binarize(resize_nearest(images))
    tasks = []
    for i, group in enumerate(LABEL_GROUPS, start=1):
        idx = _group_indices(labels, group, samples_per_task)
        onehot = torch.nn.functional.one_hot(labels[idx], NUM_CLASSES).float()
        tasks.append(
            TaskSpec(
                task_id=i,
                class_set=tuple(group),
                mode=ConditioningMode.LABEL,
                conditions=onehot,
                targets=big[idx],
                digit_labels=labels[idx],
            )
        )
    return TaskSequence(tasks=tasks, strategy=strategy, seed=seed)


def merge_tasks(tasks: Sequence[TaskSpec]) -> TaskSpec:
    """Union of task datasets (joint-learning baseline)."""
    classes: list[int] = []
    for t in tasks:
        classes.extend(t.class_set)
    return TaskSpec(
        task_id=tasks[-1].task_id,
        class_set=tuple(classes),
        mode=tasks[0].mode,
        conditions=torch.cat([t.conditions for t in tasks]),
        targets=torch.cat([t.targets for t in tasks]),
        digit_labels=torch.cat([t.digit_labels for t in tasks]),
    )


def batch_iterator(task: TaskSpec, batch_size: int, seed: int) -> Iterator[PairedBatch]:
    """Endless stream of batches; fresh deterministic shuffle per epoch.

    The final short batch of each epoch is dropped so every step sees a
    full batch.
    """
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if batch_size > len(task):
        raise ConfigurationError(
            f"batch_size {batch_size} exceeds dataset size {len(task)}"
        )
    g = torch.Generator().manual_seed(seed)
    n = len(task)
    while True:
        perm = torch.randperm(n, generator=g)
        for start in range(0, n - batch_size + 1, batch_size):
            idx = perm[start : start + batch_size]
            yield PairedBatch(
                mode=task.mode,
                conditions=task.conditions[idx],
                targets=task.targets[idx],
                digit_labels=task.digit_labels[idx],
            )
