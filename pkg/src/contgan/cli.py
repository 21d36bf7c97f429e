"""Command-line entry point.

Subcommands:
  run       train one strategy on one experiment from a config file and
            write metrics, figures, grids, and checkpoints to a run dir
  compare   consolidate two or more finished run directories
  make-data render the synthetic digit corpus to IDX files

Config files are flat ``key = value`` lines ('#' starts a comment).
``schema_version`` is required and must be 1; unknown keys are errors.
The data root comes from the ``CONTGAN_DATA_ROOT`` environment variable
unless the config sets ``data_root``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import torch
import torch.nn.functional as F

from . import evaluation, report
from .data import (
    NUM_CLASSES,
    ConditioningMode,
    Strategy,
    build_label_tasks,
    build_segmentation_tasks,
    load_mnist,
    resize_nearest,
)
from .errors import ComparisonError, ConfigurationError, ContganError
from .losses import LossWeights
from .networks import NetworkConfig
from .report import LossCsvLogger, MetricRow
from .synth import ensure_dataset, generate_dataset
from .trainer import TrainConfig, derive_seed, save_checkpoint, train_sequence

DATA_ROOT_ENV = "CONTGAN_DATA_ROOT"
SCHEMA_VERSION = 1

EXPERIMENTS = ("mnist_segmentation", "mnist_label")
ABLATIONS = {
    "none": "both",
    "no_montage": "swap_only",
    "no_swap": "montage_only",
    "no_montage_no_swap": "current",
}

# key -> (parser, default); None default means required.
_SCHEMA: dict[str, tuple] = {
    "schema_version": (int, None),
    "experiment": (str, None),
    "strategy": (str, None),
    "ablation": (str, "none"),
    "seed": (int, 0),
    "output_dir": (str, ""),
    "data_root": (str, ""),
    "samples_per_task": (int, 2000),
    "iters_per_task": (int, 3000),
    "batch_size": (int, 16),
    "learning_rate": (float, 1e-4),
    "adam_beta1": (float, 0.5),
    "adam_beta2": (float, 0.999),
    "lambda_image": (float, 10.0),
    "lambda_kl": (float, 0.01),
    "lambda_latent": (float, 0.5),
    "beta": (float, 5.0),
    "latent_dim": (int, 8),
    "base_channels": (int, 8),
    "aux_patch_size": (int, 16),
    "eval_per_condition": (int, 50),
    "diversity_samples": (int, 8),
}


def parse_config(path: str) -> dict:
    """Read a flat key=value file against the schema."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _SCHEMA:
                raise ConfigurationError(f"{path}:{lineno}: unknown key '{key}'")
            if key in values:
                raise ConfigurationError(f"{path}:{lineno}: duplicate key '{key}'")
            parser = _SCHEMA[key][0]
            try:
                values[key] = parser(val)
            except ValueError:
                raise ConfigurationError(f"{path}:{lineno}: bad value for '{key}': {val!r}")
    for key, (_, default) in _SCHEMA.items():
        if key not in values:
            if default is None:
                raise ConfigurationError(f"missing required key '{key}'")
            values[key] = default
    validate_config(values)
    return values


def validate_config(cfg: dict) -> None:
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(
            f"rule schema-version: expected schema_version {SCHEMA_VERSION}, got {cfg['schema_version']}"
        )
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigurationError(f"rule experiment-name: unknown experiment '{cfg['experiment']}'")
    try:
        strategy = Strategy(cfg["strategy"])
    except ValueError:
        raise ConfigurationError(f"rule strategy-name: unknown strategy '{cfg['strategy']}'")
    if cfg["ablation"] not in ABLATIONS:
        raise ConfigurationError(f"rule ablation-name: unknown ablation '{cfg['ablation']}'")
    if strategy is Strategy.MR and cfg["experiment"] != "mnist_label":
        raise ConfigurationError(
            "rule mr-requires-label-conditioning: memory replay needs ground-truth "
            "label conditions and is only valid with experiment=mnist_label"
        )
    if cfg["ablation"] != "none":
        if cfg["experiment"] != "mnist_segmentation":
            raise ConfigurationError(
                "rule ablation-requires-image-conditioning: the swap operation is "
                "undefined without an image condition; ablations need "
                "experiment=mnist_segmentation"
            )
        if strategy is not Strategy.LIFELONG:
            raise ConfigurationError(
                "rule ablation-requires-lifelong: ablations narrow the auxiliary "
                "data of the lifelong strategy and need strategy=lifelong"
            )


def serialize_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_data_root(cfg: dict) -> str:
    return cfg["data_root"] or os.environ.get(DATA_ROOT_ENV) or "data"


def run_experiment(cfg: dict, output_dir: str) -> str:
    """Train, evaluate, and write all artifacts; returns the run dir."""
    strategy = Strategy(cfg["strategy"])
    mode = (
        ConditioningMode.IMAGE
        if cfg["experiment"] == "mnist_segmentation"
        else ConditioningMode.LABEL
    )
    data_root = _resolve_data_root(cfg)
    ensure_dataset(data_root)
    os.makedirs(output_dir, exist_ok=True)

    config_text = serialize_config(cfg)
    with open(os.path.join(output_dir, "config.txt"), "w") as fh:
        fh.write(config_text)
    data_files = sorted(
        os.path.join(data_root, n)
        for n in os.listdir(data_root)
        if n.endswith("ubyte")
    )
    input_hash = hashlib.sha256(
        (config_text + "".join(_sha256_file(p) for p in data_files)).encode()
    ).hexdigest()

    train_x, train_y = load_mnist(data_root, "train")
    test_x, test_y = load_mnist(data_root, "test")
    build = build_segmentation_tasks if mode is ConditioningMode.IMAGE else build_label_tasks
    seq = build(train_x, train_y, strategy, seed=cfg["seed"], samples_per_task=cfg["samples_per_task"])
    eval_seq = build(test_x, test_y, strategy, seed=cfg["seed"])

    weights = LossWeights(
        lambda_image=cfg["lambda_image"],
        lambda_kl=cfg["lambda_kl"],
        lambda_latent=cfg["lambda_latent"],
        beta=cfg["beta"],
    )
    traincfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"],
        batch_size=cfg["batch_size"],
        iters_per_task=cfg["iters_per_task"],
        weights=weights,
        seed=cfg["seed"],
        aux_patch_size=cfg["aux_patch_size"],
        aux_mode=ABLATIONS[cfg["ablation"]],
    )
    netcfg = NetworkConfig(
        latent_dim=cfg["latent_dim"],
        base_channels=cfg["base_channels"],
        image_size=64,
        cond_channels=3 if mode is ConditioningMode.IMAGE else 0,
        label_dim=0 if mode is ConditioningMode.IMAGE else NUM_CLASSES,
        out_channels=1,
    )

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "strategy": cfg["strategy"],
        "ablation": cfg["ablation"],
        "seed": cfg["seed"],
        "derived_seeds": {
            tag: derive_seed(cfg["seed"], tag) for tag in ("init", "eval", "classifier")
        },
        "input_hash": input_hash,
        "data_files": [os.path.basename(p) for p in data_files],
    }
    with open(os.path.join(output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with LossCsvLogger(os.path.join(output_dir, "losses.csv")) as logger:
        records = train_sequence(seq, traincfg, netcfg, log_fn=logger)
    for rec in records:
        save_checkpoint(rec, os.path.join(output_dir, f"task{rec.task_id}.ckpt"))

    # --- evaluation ---
    eval_seed = derive_seed(cfg["seed"], "eval")
    classifier = evaluation.train_classifier(
        resize_nearest(train_x, 64), train_y, seed=derive_seed(cfg["seed"], "classifier")
    )
    per_cond = cfg["eval_per_condition"]
    rows: list[MetricRow] = []
    tasks_by_id = {t.task_id: t for t in eval_seq.tasks}
    curve: list[float] = []
    for rec in records:
        seen_ids = [i for i in sorted(tasks_by_id) if i <= rec.task_id]
        for tid in seen_ids:
            acc = evaluation.acc_metric(
                rec.model, [tasks_by_id[tid]], classifier, per_cond, eval_seed
            )
            rows.append(MetricRow(rec.task_id, cfg["strategy"], str(tid), acc))
            if tid == 1:
                curve.append(acc)
    final = records[-1]
    all_tasks = [tasks_by_id[i] for i in sorted(tasks_by_id) if i <= final.task_id]
    acc_all = evaluation.acc_metric(final.model, all_tasks, classifier, per_cond, eval_seed)
    r_acc = evaluation.r_acc_metric(
        final.model, all_tasks, resize_nearest(test_x, 64), test_y, per_cond, eval_seed
    )
    first = all_tasks[0]
    if mode is ConditioningMode.IMAGE:
        div_cond = first.conditions[0]
    else:
        div_cond = F.one_hot(torch.tensor(first.class_set[0]), NUM_CLASSES).float()
    diversity = evaluation.diversity_proxy(
        final.model, div_cond, cfg["diversity_samples"], eval_seed
    )
    rows.append(
        MetricRow(
            final.task_id, cfg["strategy"], "all", acc_all, r_acc, diversity,
            classifier.holdout_accuracy,
        )
    )
    report.write_metrics_csv(os.path.join(output_dir, "metrics.csv"), rows)
    report.write_summary(
        os.path.join(output_dir, "summary.txt"),
        rows,
        [
            f"experiment: {cfg['experiment']}",
            f"strategy: {cfg['strategy']} (ablation: {cfg['ablation']})",
            f"seed: {cfg['seed']}",
            f"classifier holdout accuracy: {classifier.holdout_accuracy:.4f}",
            "diversity_proxy is mean pairwise L1 in pixel space, not a perceptual metric",
        ],
    )
    report.plot_forgetting_curves(
        os.path.join(output_dir, "forgetting_curve.png"), {cfg["strategy"]: curve}
    )
    report.plot_losses(os.path.join(output_dir, "losses.png"), os.path.join(output_dir, "losses.csv"))

    grid_dir = os.path.join(output_dir, "grids")
    os.makedirs(grid_dir, exist_ok=True)
    g = torch.Generator().manual_seed(derive_seed(cfg["seed"], "grid"))
    z = torch.randn(6, netcfg.latent_dim, generator=g)
    for task in all_tasks:
        if mode is ConditioningMode.IMAGE:
            conds = task.conditions[:3]
        else:
            conds = F.one_hot(torch.tensor(list(task.class_set)), NUM_CLASSES).float()
        evaluation.image_grid(final.model, conds, z, os.path.join(grid_dir, f"task{task.task_id}.png"))
    return output_dir


def run_command(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    output_dir = args.output or cfg["output_dir"] or f"runs/{cfg['experiment']}-{cfg['strategy']}"
    cfg["output_dir"] = output_dir
    validate_config(cfg)
    run_experiment(cfg, output_dir)
    print(f"run complete: {output_dir}")
    return 0


def compare_command(args: argparse.Namespace) -> int:
    if len(args.dirs) < 2:
        raise ConfigurationError("rule compare-arity: compare needs at least two run directories")
    runs: dict[str, dict] = {}
    for d in args.dirs:
        manifest_path = os.path.join(d, "manifest.json")
        metrics_path = os.path.join(d, "metrics.csv")
        if not (os.path.exists(manifest_path) and os.path.exists(metrics_path)):
            raise ComparisonError(f"{d} is not a completed run directory")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        label = os.path.basename(os.path.normpath(d))
        if label in runs:
            label = f"{label}-{len(runs)}"
        runs[label] = {"manifest": manifest, "rows": report.read_metrics_csv(metrics_path)}
    experiments = {r["manifest"]["experiment"] for r in runs.values()}
    if len(experiments) != 1:
        raise ComparisonError(
            f"rule compare-same-experiment: runs mix experiments {sorted(experiments)}"
        )
    table = report.compare_table({k: v["rows"] for k, v in runs.items()})
    curves = {
        label: [
            float(r["acc"])
            for r in sorted(run["rows"], key=lambda r: int(r["stage"]))
            if r["eval_task"] == "1"
        ]
        for label, run in runs.items()
    }
    out_dir = args.output or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "comparison.txt"), "w") as fh:
        fh.write(table + "\n")
    report.plot_forgetting_curves(os.path.join(out_dir, "comparison_forgetting.png"), curves)
    print(table)
    return 0


def make_data_command(args: argparse.Namespace) -> int:
    generate_dataset(args.out, args.train_per_class, args.test_per_class, args.seed)
    print(f"wrote IDX corpus to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contgan", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    p_run.add_argument("--config", required=True, help="path to a key=value config file")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--output", default=None, help="override the output directory")
    p_run.set_defaults(fn=run_command)

    p_cmp = sub.add_parser("compare", help="consolidate finished run directories")
    p_cmp.add_argument("dirs", nargs="+", help="two or more run directories")
    p_cmp.add_argument("--output", default=None, help="directory for the comparison artifacts")
    p_cmp.set_defaults(fn=compare_command)

    p_data = sub.add_parser("make-data", help="render the synthetic digit corpus")
    p_data.add_argument("--out", required=True)
    p_data.add_argument("--train-per-class", type=int, default=800)
    p_data.add_argument("--test-per-class", type=int, default=200)
    p_data.add_argument("--seed", type=int, default=0)
    p_data.set_defaults(fn=make_data_command)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ContganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
