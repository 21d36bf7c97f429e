"""Task-sequence training under the four strategies.

Per-purpose RNG streams are derived from (seed, task_id, tag), so every
task stage is reproducible in isolation; resuming from a checkpoint at a
task boundary replays the uninterrupted run bit for bit.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import torch

from . import archive
from .auxdata import build_aux_batch
from .data import (
    ConditioningMode,
    PairedBatch,
    Strategy,
    TaskSequence,
    TaskSpec,
    batch_iterator,
    merge_tasks,
)
from .distill import (
    TeacherStudentPair,
    check_task_one_has_no_teacher,
    conflicted_objective,
    lifelong_objective,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    SequencingError,
    StrategyError,
)
from .losses import LossReport, LossWeights, bicycle_objective, discriminator_objective
from .networks import ModelTriple, NetworkConfig, build_model, clone_frozen

LogFn = Callable[[int, int, LossReport], None]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 64
    iters_per_task: int = 3000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    aux_patch_size: int = 16
    aux_mode: str = "both"  # narrowed by ablations

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.iters_per_task < 0:
            raise ConfigurationError("iters_per_task must be >= 0")


@dataclass
class CheckpointRecord:
    task_id: int
    strategy: Strategy
    model: ModelTriple
    optimizer_state: dict
    rng_state: dict
    metrics_so_far: dict


def derive_seed(seed: int, *tags) -> int:
    """Stable sub-seed for a named RNG stream."""
    text = f"{seed}|" + "|".join(str(t) for t in tags)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") % 2**63


def _make_optimizers(model: ModelTriple, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_eg = torch.optim.Adam(model.eg_parameters(), lr=cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(model.d_parameters(), lr=cfg.learning_rate, betas=betas)
    return opt_eg, opt_d


def train_task(
    student: ModelTriple,
    teacher: ModelTriple | None,
    task: TaskSpec,
    cfg: TrainConfig,
    strategy: Strategy,
    previous_class_sets: list[tuple[int, ...]] | None = None,
    log_fn: LogFn | None = None,
    aux_dump_dir: str | None = None,
) -> ModelTriple:
    """Run one task stage of alternating D / (G, E) updates in place."""
    student, _ = _run_task(
        student, teacher, task, cfg, strategy, previous_class_sets, log_fn, aux_dump_dir
    )
    return student


def _run_task(
    student: ModelTriple,
    teacher: ModelTriple | None,
    task: TaskSpec,
    cfg: TrainConfig,
    strategy: Strategy,
    previous_class_sets: list[tuple[int, ...]] | None = None,
    log_fn: LogFn | None = None,
    aux_dump_dir: str | None = None,
):
    distilling = strategy in (Strategy.LIFELONG, Strategy.CONFLICTED) and cfg.weights.beta > 0
    if strategy in (Strategy.LIFELONG, Strategy.CONFLICTED):
        check_task_one_has_no_teacher(task.task_id, teacher)
    pair = TeacherStudentPair(teacher=teacher, student=student) if (teacher and distilling) else None

    opt_eg, opt_d = _make_optimizers(student, cfg)
    data_it = batch_iterator(task, cfg.batch_size, derive_seed(cfg.seed, task.task_id, "data"))
    prior_g = torch.Generator().manual_seed(derive_seed(cfg.seed, task.task_id, "prior"))
    distill_g = torch.Generator().manual_seed(derive_seed(cfg.seed, task.task_id, "distill"))
    aux_base = derive_seed(cfg.seed, task.task_id, "aux")
    latent = student.config.latent_dim

    for it in range(cfg.iters_per_task):
        batch = next(data_it)
        eps = torch.randn(len(batch), latent, generator=prior_g)
        z = torch.randn(len(batch), latent, generator=prior_g)

        # Discriminator step against detached fakes.
        with torch.no_grad():
            mu, logvar = student.encoder(batch.targets)
            z_tilde = mu + torch.exp(0.5 * logvar) * eps
            fake_cvae = student.generator(batch.conditions, z_tilde)
            fake_clr = student.generator(batch.conditions, z)
        d_loss = discriminator_objective(student, batch, fake_cvae, fake_clr)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # Generator/encoder step.
        if pair is not None:
            z_d = torch.randn(len(batch), latent, generator=distill_g)
            if strategy is Strategy.CONFLICTED or cfg.aux_mode == "current":
                g_loss, report, _ = conflicted_objective(pair, batch, cfg.weights, eps, z, z_d)
            else:
                aux = build_aux_batch(
                    batch,
                    previous_class_sets or [],
                    cfg.aux_patch_size,
                    seed=(aux_base + it) % 2**63,
                    aux_mode=cfg.aux_mode,
                )
                if aux_dump_dir and it % 500 == 0:
                    _dump_aux_grid(aux, aux_dump_dir, task.task_id, it)
                g_loss, report, _ = lifelong_objective(pair, batch, aux, cfg.weights, eps, z, z_d)
        else:
            g_loss, report, _ = bicycle_objective(student, batch, cfg.weights, eps, z)
        opt_eg.zero_grad()
        g_loss.backward()
        opt_eg.step()

        report.total_d = float(d_loss.detach())
        if not (math.isfinite(report.total_g) and math.isfinite(report.total_d)):
            raise DivergenceError(
                f"non-finite loss at task {task.task_id} iteration {it}; "
                "use the last saved checkpoint to restart"
            )
        if log_fn is not None:
            log_fn(it, task.task_id, report)
    return student, (opt_eg, opt_d)


def _dump_aux_grid(aux, out_dir: str, task_id: int, iteration: int) -> None:
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    imgs = aux.images
    if imgs.dim() != 4:
        return
    n = min(8, len(imgs))
    tiles = ((imgs[:n].clamp(-1, 1) + 1) * 127.5).to(torch.uint8)
    if tiles.shape[1] == 1:
        tiles = tiles.expand(-1, 3, -1, -1)
    row = torch.cat(list(tiles.permute(0, 2, 3, 1)), dim=1).numpy()
    Image.fromarray(row).save(
        os.path.join(out_dir, f"aux_task{task_id}_iter{iteration:05d}_{aux.provenance.value}.png")
    )


def memory_replay_hybrid(
    prev_model: ModelTriple,
    task: TaskSpec,
    previous_class_sets: list[tuple[int, ...]],
    replay_fraction: float | None = None,
    seed: int = 0,
) -> TaskSpec:
    """Current pairs plus generated pairs for previously seen labels.

    Default sizing matches the per-class count of the current task so the
    hybrid set is class-balanced.
    """
    if task.mode is not ConditioningMode.LABEL:
        raise StrategyError("memory replay requires label-conditioned tasks")
    if not previous_class_sets:
        raise SequencingError("memory replay needs at least one previous task")
    prev_classes = sorted({c for s in previous_class_sets for c in s})
    if replay_fraction is not None and replay_fraction == 0:
        return task
    if replay_fraction is None:
        per_class = len(task) // len(task.class_set)
    else:
        per_class = max(1, int(replay_fraction * len(task)) // len(prev_classes))
    g = torch.Generator().manual_seed(seed)
    labels = torch.tensor(prev_classes).repeat_interleave(per_class)
    onehot = torch.nn.functional.one_hot(labels, task.conditions.shape[1]).float()
    images = []
    with torch.no_grad():
        for start in range(0, len(labels), 64):
            chunk = onehot[start : start + 64]
            z = torch.randn(len(chunk), prev_model.config.latent_dim, generator=g)
            images.append(prev_model.generator(chunk, z))
    return TaskSpec(
        task_id=task.task_id,
        class_set=tuple(sorted(set(task.class_set) | set(prev_classes))),
        mode=task.mode,
        conditions=torch.cat([task.conditions, onehot]),
        targets=torch.cat([task.targets, torch.cat(images)]),
        digit_labels=torch.cat([task.digit_labels, labels]),
    )


def _snapshot_record(
    model: ModelTriple,
    task_id: int,
    strategy: Strategy,
    opts,
    cfg: TrainConfig,
    metrics: dict,
) -> CheckpointRecord:
    opt_state = {name: opt.state_dict() for name, opt in zip(("eg", "d"), opts)} if opts else {}
    rng = {
        "data": derive_seed(cfg.seed, task_id, "data"),
        "prior": derive_seed(cfg.seed, task_id, "prior"),
        "distill": derive_seed(cfg.seed, task_id, "distill"),
        "aux": derive_seed(cfg.seed, task_id, "aux"),
    }
    return CheckpointRecord(
        task_id=task_id,
        strategy=strategy,
        model=clone_frozen(model),
        optimizer_state=opt_state,
        rng_state=rng,
        metrics_so_far=dict(metrics),
    )


def train_sequence(
    seq: TaskSequence,
    cfg: TrainConfig,
    netcfg: NetworkConfig,
    log_fn: LogFn | None = None,
    resume_from: CheckpointRecord | None = None,
    aux_dump_dir: str | None = None,
) -> list[CheckpointRecord]:
    """Run a full sequence under its strategy; one checkpoint per stage."""
    strategy = seq.strategy
    if strategy is Strategy.MR and seq.tasks[0].mode is not ConditioningMode.LABEL:
        raise StrategyError("memory replay is not applicable without a conditional ground-truth input")

    records: list[CheckpointRecord] = []
    metrics: dict = {}

    if strategy is Strategy.JL:
        merged = merge_tasks(seq.tasks)
        jl_cfg = replace(cfg, iters_per_task=cfg.iters_per_task * len(seq.tasks))
        model = build_model(netcfg, seed=derive_seed(cfg.seed, "init"))
        # Same total update count as a sequential run over all stages.
        jl_task = TaskSpec(1, merged.class_set, merged.mode, merged.conditions, merged.targets, merged.digit_labels)
        _, opts = _run_task(model, None, jl_task, jl_cfg, Strategy.SFT, log_fn=log_fn)
        records.append(
            _snapshot_record(model, len(seq.tasks), strategy, opts, cfg, {"mode": "joint"})
        )
        return records

    if resume_from is not None:
        model = build_model(netcfg, seed=derive_seed(cfg.seed, "init"))
        model.load_named_tensors(resume_from.model.named_tensors())
        start = resume_from.task_id + 1
        records.append(resume_from)
    else:
        model = build_model(netcfg, seed=derive_seed(cfg.seed, "init"))
        start = 1

    for task in seq.tasks:
        if task.task_id < start:
            continue
        teacher = None
        train_on = task
        prev_sets = [t.class_set for t in seq.tasks if t.task_id < task.task_id]
        if strategy in (Strategy.LIFELONG, Strategy.CONFLICTED) and task.task_id >= 2:
            teacher = clone_frozen(model)
        if strategy is Strategy.MR and task.task_id >= 2:
            train_on = memory_replay_hybrid(
                clone_frozen(model),
                task,
                prev_sets,
                seed=derive_seed(cfg.seed, task.task_id, "replay"),
            )
        _, opts = _run_task(
            model,
            teacher,
            train_on,
            cfg,
            strategy,
            previous_class_sets=prev_sets,
            log_fn=log_fn,
            aux_dump_dir=aux_dump_dir,
        )
        records.append(_snapshot_record(model, task.task_id, strategy, opts, cfg, metrics))
    return records


# Checkpoint (de)serialization -------------------------------------------------


def _config_meta(cfg: NetworkConfig) -> dict:
    return {
        "latent_dim": cfg.latent_dim,
        "base_channels": cfg.base_channels,
        "image_size": cfg.image_size,
        "cond_channels": cfg.cond_channels,
        "label_dim": cfg.label_dim,
        "out_channels": cfg.out_channels,
    }


def save_checkpoint(record: CheckpointRecord, path: str) -> None:
    tensors: dict[str, torch.Tensor] = {}
    for name, t in record.model.named_tensors().items():
        tensors[f"model/{name}"] = t
    steps: dict[str, int] = {}
    for opt_name, state in record.optimizer_state.items():
        for pid, pstate in state.get("state", {}).items():
            for key in ("exp_avg", "exp_avg_sq"):
                if key in pstate:
                    tensors[f"opt_{opt_name}/{pid}/{key}"] = pstate[key]
            step = pstate.get("step")
            if step is not None:
                steps[f"{opt_name}/{pid}"] = int(step)
    meta = {
        "kind": "checkpoint",
        "task_id": record.task_id,
        "strategy": record.strategy.value,
        "config": _config_meta(record.model.config),
        "rng_state": record.rng_state,
        "metrics_so_far": record.metrics_so_far,
        "optimizer_steps": steps,
    }
    archive.save_archive(path, tensors, meta)


def load_checkpoint(path: str, expect_config: NetworkConfig | None = None) -> CheckpointRecord:
    tensors, meta = archive.load_archive(path)
    if meta.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint archive")
    cfg = NetworkConfig(**meta["config"])
    if expect_config is not None and cfg != expect_config:
        raise ConfigurationError(
            f"checkpoint config {meta['config']} does not match expected {_config_meta(expect_config)}"
        )
    model = build_model(cfg, seed=0)
    model.load_named_tensors(
        {k[len("model/") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("model/")}
    )
    model = clone_frozen(model)
    opt_state: dict = {}
    for k, v in tensors.items():
        if not k.startswith("opt_"):
            continue
        opt_name, pid, key = k.split("/")
        bucket = opt_state.setdefault(opt_name[4:], {"state": {}, "param_groups": []})
        bucket["state"].setdefault(int(pid), {})[key] = torch.from_numpy(v)
    for sk, step in meta.get("optimizer_steps", {}).items():
        opt_name, pid = sk.split("/")
        opt_state.setdefault(opt_name, {"state": {}, "param_groups": []})["state"].setdefault(int(pid), {})[
            "step"
        ] = step
    return CheckpointRecord(
        task_id=meta["task_id"],
        strategy=Strategy(meta["strategy"]),
        model=model,
        optimizer_state=opt_state,
        rng_state=meta["rng_state"],
        metrics_so_far=meta["metrics_so_far"],
    )
