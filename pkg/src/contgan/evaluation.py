"""Quantitative evaluation: classifier accuracy on generated images (acc),
reverse accuracy (r_acc), and a pixel-space diversity proxy.

The diversity number is mean pairwise L1 between same-condition samples.
It stands in for a perceptual metric (which needs a pretrained network
this artifact does not ship) and is labeled as a proxy everywhere it is
reported; only comparisons against the same proxy on real images are
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import NUM_CLASSES, ConditioningMode, TaskSpec
from .errors import ContractError, DegenerateDataError
from .networks import ModelTriple
from .trainer import CheckpointRecord, derive_seed

SANITY_GATE = 0.97


class _ConvClassifier(nn.Module):
    """Two conv blocks and a linear head over 64x64 single-channel input."""

    def __init__(self, channels: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(1, channels, 3, 2, 1)
        self.conv2 = nn.Conv2d(channels, channels * 2, 3, 2, 1)
        self.head = nn.Linear(channels * 2 * 16 * 16, NUM_CLASSES)

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        return self.head(h.flatten(1))


@dataclass
class EvalClassifier:
    net: _ConvClassifier
    holdout_accuracy: float
    trained_on: str  # "real" | "generated"

    def predict(self, images: Tensor) -> Tensor:
        self.net.eval()
        preds = []
        with torch.no_grad():
            for start in range(0, len(images), 256):
                preds.append(self.net(images[start : start + 256]).argmax(dim=1))
        return torch.cat(preds)


def train_classifier(
    images: Tensor,
    labels: Tensor,
    seed: int,
    trained_on: str = "real",
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 32,
    holdout_fraction: float = 0.1,
    channels: int = 32,
) -> EvalClassifier:
    """Deterministic training run with a held-out accuracy estimate."""
    if labels.unique().numel() < 2:
        raise DegenerateDataError("classifier training needs at least two classes")
    g = torch.Generator().manual_seed(derive_seed(seed, "classifier"))
    net = _ConvClassifier(channels=channels)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                m.bias.zero_()
    perm = torch.randperm(len(images), generator=g)
    n_hold = max(1, int(len(images) * holdout_fraction))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    decay_at = max(1, int(epochs * 0.6))
    for epoch in range(epochs):
        if epoch == decay_at:
            for group in opt.param_groups:
                group["lr"] = lr / 5.0
        order = train_idx[torch.randperm(len(train_idx), generator=g)]
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = F.cross_entropy(net(images[idx]), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    clf = EvalClassifier(net=net, holdout_accuracy=0.0, trained_on=trained_on)
    preds = clf.predict(images[hold_idx])
    clf.holdout_accuracy = float((preds == labels[hold_idx]).float().mean())
    return clf


def generate_labeled(
    model: ModelTriple,
    tasks: list[TaskSpec],
    per_condition: int,
    seed: int,
) -> tuple[Tensor, Tensor]:
    """Sample (generated image, conditioning class) pairs across tasks.

    Label-conditioned: `per_condition` draws per class. Image-conditioned:
    one draw per dataset pair, capped at `per_condition` per class.
    """
    g = torch.Generator().manual_seed(derive_seed(seed, "eval-gen"))
    latent = model.config.latent_dim
    images, labels = [], []
    with torch.no_grad():
        for task in tasks:
            if task.mode is ConditioningMode.LABEL:
                for c in task.class_set:
                    cond = F.one_hot(torch.full((per_condition,), c), NUM_CLASSES).float()
                    z = torch.randn(per_condition, latent, generator=g)
                    images.append(model.generator(cond, z))
                    labels.append(torch.full((per_condition,), c))
            else:
                for c in task.class_set:
                    idx = (task.digit_labels == c).nonzero().squeeze(1)[:per_condition]
                    if idx.numel() == 0:
                        continue
                    z = torch.randn(len(idx), latent, generator=g)
                    images.append(model.generator(task.conditions[idx], z))
                    labels.append(task.digit_labels[idx])
    return torch.cat(images), torch.cat(labels)


def acc_metric(
    model: ModelTriple,
    tasks: list[TaskSpec],
    classifier: EvalClassifier,
    per_condition: int = 50,
    seed: int = 0,
) -> float:
    """Accuracy of a real-trained classifier on generated images."""
    if classifier.trained_on == "real" and classifier.holdout_accuracy < SANITY_GATE:
        raise ContractError(
            f"classifier sanity gate failed: {classifier.holdout_accuracy:.4f} < {SANITY_GATE}"
        )
    images, labels = generate_labeled(model, tasks, per_condition, seed)
    preds = classifier.predict(images)
    return float((preds == labels).float().mean())


def r_acc_metric(
    model: ModelTriple,
    tasks: list[TaskSpec],
    real_images: Tensor,
    real_labels: Tensor,
    per_condition: int = 50,
    seed: int = 0,
) -> float:
    """Accuracy on real images of a classifier trained on generated ones.

    If the generated set is too degenerate to train on, chance level over
    the seen classes is reported.
    """
    images, labels = generate_labeled(model, tasks, per_condition, seed)
    seen = sorted({c for t in tasks for c in t.class_set})
    keep = torch.isin(real_labels, torch.tensor(seen))
    try:
        clf = train_classifier(images, labels, seed=derive_seed(seed, "r-acc"), trained_on="generated")
    except DegenerateDataError:
        return 1.0 / len(seen)
    preds = clf.predict(real_images[keep])
    return float((preds == real_labels[keep]).float().mean())


def diversity_proxy(model: ModelTriple, condition: Tensor, num_samples: int, seed: int) -> float:
    """Mean pairwise L1 between images generated from one condition."""
    if num_samples < 2:
        raise ContractError("diversity needs at least two samples")
    g = torch.Generator().manual_seed(derive_seed(seed, "diversity"))
    cond = condition.unsqueeze(0) if condition.dim() in (1, 3) else condition
    cond = cond.expand(num_samples, *cond.shape[1:])
    with torch.no_grad():
        z = torch.randn(num_samples, model.config.latent_dim, generator=g)
        out = model.generator(cond, z)
    total, pairs = 0.0, 0
    for i in range(num_samples):
        for j in range(i + 1, num_samples):
            total += float((out[i] - out[j]).abs().mean())
            pairs += 1
    return total / pairs


def pairwise_l1(images: Tensor) -> float:
    """Reference diversity of a real same-condition image set."""
    total, pairs = 0.0, 0
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            total += float((images[i] - images[j]).abs().mean())
            pairs += 1
    return total / max(pairs, 1)


def forgetting_curve(
    checkpoints: list[CheckpointRecord],
    classifier: EvalClassifier,
    first_task: TaskSpec,
    per_condition: int = 50,
    seed: int = 0,
) -> list[float]:
    """Task-1 accuracy after each completed stage."""
    if [c.task_id for c in checkpoints] != sorted(c.task_id for c in checkpoints):
        raise ContractError("checkpoints must be ordered by task")
    return [
        acc_metric(rec.model, [first_task], classifier, per_condition, seed) for rec in checkpoints
    ]


def image_grid(
    model: ModelTriple,
    conditions: Tensor,
    z_grid: Tensor,
    path: str,
) -> str:
    """Write a lossless PNG: one row per condition, one column per z."""
    from PIL import Image

    rows = []
    with torch.no_grad():
        for i in range(len(conditions)):
            cond = conditions[i : i + 1].expand(len(z_grid), *conditions.shape[1:])
            out = model.generator(cond, z_grid)
            rows.append(torch.cat(list(out.permute(0, 2, 3, 1)), dim=1))
    grid = torch.cat(rows, dim=0)
    arr = ((grid.clamp(-1, 1) + 1) * 127.5).to(torch.uint8).numpy()
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")
    return path
