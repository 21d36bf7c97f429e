"""Run artifacts: loss and metric CSV files, summary tables, and figures.

All writers are deterministic: the same inputs produce byte-identical
files. Floats are printed with a fixed format and matplotlib renders with
a pinned style and no timestamps in metadata.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ComparisonError
from .losses import LossReport

_FLOAT_FMT = "{:.6f}"

DIVERSITY_COL = "diversity (proxy, not LPIPS)"
METRIC_COLUMNS = ("stage", "strategy", "eval_task", "acc", "r_acc", DIVERSITY_COL, "gate")


def _fmt(value: float | int | str) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT.format(value)
    return str(value)


class LossCsvLogger:
    """Streams per-iteration loss rows; usable as a trainer `log_fn`."""

    HEADER = ("iteration", "task_id", *LossReport.COLUMNS)

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.HEADER)

    def __call__(self, iteration: int, task_id: int, report: LossReport) -> None:
        self._writer.writerow([iteration, task_id, *(_fmt(v) for v in report.row())])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LossCsvLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class MetricRow:
    """One evaluation result. `eval_task` is a task id or "all"."""

    stage: int
    strategy: str
    eval_task: str
    acc: float
    r_acc: float | None = None
    diversity_proxy: float | None = None
    gate: float | None = None

    def row(self) -> list[str]:
        return [
            str(self.stage),
            self.strategy,
            str(self.eval_task),
            _fmt(self.acc),
            "" if self.r_acc is None else _fmt(self.r_acc),
            "" if self.diversity_proxy is None else _fmt(self.diversity_proxy),
            "" if self.gate is None else _fmt(self.gate),
        ]


def write_metrics_csv(path: str, rows: list[MetricRow]) -> str:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow(row.row())
    return path


def read_metrics_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path: str, rows: list[MetricRow], header_lines: list[str]) -> str:
    """Plain-text table of the metric rows, aligned for reading."""
    lines = list(header_lines)
    lines.append("")
    widths = [max(len(c), 10) for c in METRIC_COLUMNS]
    lines.append("  ".join(c.ljust(w) for c, w in zip(METRIC_COLUMNS, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row.row(), widths)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _save_fig(fig, path: str) -> None:
    fig.savefig(path, metadata={"Software": None, "CreationDate": None})
    plt.close(fig)


def plot_forgetting_curves(path: str, curves: dict[str, list[float]]) -> str:
    """Task-1 accuracy after each stage, one line per run label."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(curves):
        values = curves[label]
        ax.plot(range(1, len(values) + 1), values, marker="o", label=label)
    ax.set_xlabel("completed task stage")
    ax.set_ylabel("task-1 accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Retention of the first task")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_fig(fig, path)
    return path


def plot_losses(path: str, loss_csv: str, columns: tuple[str, ...] = ("total_g", "total_d")) -> str:
    """Loss components against iteration from a loss CSV."""
    with open(loss_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ComparisonError(f"no loss rows in {loss_csv}")
    fig, ax = plt.subplots(figsize=(6, 4))
    iters = [int(r["iteration"]) for r in rows]
    for col in columns:
        ax.plot(iters, [float(r[col]) for r in rows], label=col, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_fig(fig, path)
    return path


def compare_table(run_rows: dict[str, list[dict[str, str]]]) -> str:
    """Side-by-side final metrics of several runs.

    `run_rows` maps a run label to that run's parsed metrics CSV. The
    winner on each numeric column is flagged with `*`.
    """
    if len(run_rows) < 2:
        raise ComparisonError("comparison needs at least two runs")
    finals = {}
    for label, rows in run_rows.items():
        overall = [r for r in rows if r["eval_task"] == "all"]
        if not overall:
            raise ComparisonError(f"run {label} has no overall metrics row")
        finals[label] = overall[-1]
    numeric = ("acc", "r_acc", DIVERSITY_COL)
    best = {}
    for col in numeric:
        values = {k: float(v[col]) for k, v in finals.items() if v[col] != ""}
        if values:
            best[col] = max(values, key=values.get)
    labels = sorted(finals)
    header = ["run", "strategy", *numeric]
    widths = [max(len("run"), *(len(l) for l in labels))] + [
        max(len(h), 12) for h in header[1:]
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for label in labels:
        row = finals[label]
        cells = [label, row["strategy"]]
        for col in numeric:
            cell = row[col] if row[col] != "" else "n/a"
            if best.get(col) == label:
                cell += " *"
            cells.append(cell)
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    lines.append("")
    lines.append("* best value in column")
    return "\n".join(lines)
