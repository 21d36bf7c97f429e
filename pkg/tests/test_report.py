"""Tests for CSV writers, summary tables, comparisons, and figures."""

import pytest

from contgan.errors import ComparisonError
from contgan.losses import LossReport
from contgan.report import (
    DIVERSITY_COL,
    LossCsvLogger,
    MetricRow,
    compare_table,
    plot_forgetting_curves,
    plot_losses,
    read_metrics_csv,
    write_metrics_csv,
    write_summary,
)


def _report(v: float) -> LossReport:
    return LossReport(
        gan_cvae=v, gan_clr=v, l1_image=v, kl=v, l1_latent=v,
        distill_cvae=0.0, distill_clr=0.0, total_g=5 * v, total_d=v,
    )


def test_loss_logger_header_and_rows(tmp_path):
    path = tmp_path / "losses.csv"
    with LossCsvLogger(str(path)) as log:
        log(0, 1, _report(1.0))
        log(1, 1, _report(0.5))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "iteration,task_id," + ",".join(LossReport.COLUMNS)
    assert lines[1].startswith("0,1,1.000000")
    assert len(lines) == 3


def test_metrics_round_trip(tmp_path):
    rows = [
        MetricRow(1, "sft", "1", 0.9),
        MetricRow(2, "sft", "all", 0.6, r_acc=0.55, diversity_proxy=0.12, gate=0.98),
    ]
    path = write_metrics_csv(str(tmp_path / "m.csv"), rows)
    parsed = read_metrics_csv(path)
    assert parsed[0]["acc"] == "0.900000"
    assert parsed[0]["r_acc"] == ""
    assert parsed[1][DIVERSITY_COL] == "0.120000"
    assert parsed[1]["gate"] == "0.980000"


def test_metrics_deterministic_bytes(tmp_path):
    rows = [MetricRow(1, "jl", "all", 0.5, 0.4, 0.3, 0.99)]
    a = write_metrics_csv(str(tmp_path / "a.csv"), rows)
    b = write_metrics_csv(str(tmp_path / "b.csv"), rows)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_summary_contains_header_and_values(tmp_path):
    rows = [MetricRow(1, "sft", "1", 0.875)]
    path = write_summary(str(tmp_path / "s.txt"), rows, ["experiment: demo"])
    text = open(path).read()
    assert "experiment: demo" in text
    assert "0.875000" in text
    assert DIVERSITY_COL in text


def _rows(strategy, acc, r_acc, div):
    return [
        {"stage": "3", "strategy": strategy, "eval_task": "all",
         "acc": f"{acc:.6f}", "r_acc": f"{r_acc:.6f}",
         DIVERSITY_COL: f"{div:.6f}", "gate": "0.980000"},
    ]


def test_compare_table_flags_winner():
    table = compare_table({
        "run-sft": _rows("sft", 0.4, 0.3, 0.05),
        "run-ll": _rows("lifelong", 0.9, 0.8, 0.2),
    })
    winner_line = [l for l in table.split("\n") if l.startswith("run-ll")][0]
    assert winner_line.count("*") == 3
    loser_line = [l for l in table.split("\n") if l.startswith("run-sft")][0]
    assert "*" not in loser_line


def test_compare_table_needs_two_runs():
    with pytest.raises(ComparisonError):
        compare_table({"only": _rows("sft", 0.4, 0.3, 0.05)})


def test_compare_table_needs_overall_row():
    bad = [{"stage": "1", "strategy": "sft", "eval_task": "1", "acc": "0.5",
            "r_acc": "", DIVERSITY_COL: "", "gate": ""}]
    with pytest.raises(ComparisonError):
        compare_table({"a": bad, "b": _rows("jl", 0.5, 0.5, 0.1)})


def test_compare_table_stable():
    runs = {"a": _rows("sft", 0.4, 0.3, 0.05), "b": _rows("jl", 0.9, 0.8, 0.2)}
    assert compare_table(runs) == compare_table(dict(reversed(list(runs.items()))))


def test_forgetting_plot_deterministic(tmp_path):
    curves = {"sft": [0.9, 0.4, 0.2], "lifelong": [0.9, 0.85, 0.8]}
    a = plot_forgetting_curves(str(tmp_path / "a.png"), curves)
    b = plot_forgetting_curves(str(tmp_path / "b.png"), curves)
    assert open(a, "rb").read() == open(b, "rb").read()
    assert open(a, "rb").read()[:8] == b"\x89PNG\r\n\x1a\n"


def test_loss_plot_from_csv(tmp_path):
    csv_path = tmp_path / "losses.csv"
    with LossCsvLogger(str(csv_path)) as log:
        for i in range(5):
            log(i, 1, _report(1.0 / (i + 1)))
    out = plot_losses(str(tmp_path / "fig.png"), str(csv_path))
    assert open(out, "rb").read()[:8] == b"\x89PNG\r\n\x1a\n"


def test_loss_plot_rejects_empty(tmp_path):
    csv_path = tmp_path / "empty.csv"
    with LossCsvLogger(str(csv_path)):
        pass
    with pytest.raises(ComparisonError):
        plot_losses(str(tmp_path / "fig.png"), str(csv_path))
