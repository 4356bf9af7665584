"""Report emission: delimited plot data plus rendered figures.

Every report artifact is written twice over: the numbers as CSV/JSON for
downstream tooling, and a matplotlib rendering next to them for a quick
look.  JSON payloads carry the resolved config snapshot and no timestamps,
so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def metrics_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text P/R/F1 table, values as percentages."""
    lines = [f"{'task':<10} {'P':>7} {'R':>7} {'F1':>7}"]
    for r in reports:
        lines.append(f"{r.task:<10} {100 * r.precision:>7.2f} {100 * r.recall:>7.2f} {100 * r.f1:>7.2f}")
    return "\n".join(lines) + "\n"


def write_probability_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "probability", "label", "prediction"])
        for i, (p, y, yhat) in enumerate(zip(report.probabilities, report.labels,
                                             report.predictions)):
            writer.writerow([i, repr(p), y, yhat])


def render_probability_figure(path, report: EvalReport) -> None:
    """Per-window probability trace with labeled regions shaded."""
    fig, ax = plt.subplots(figsize=(9, 3))
    idx = range(len(report.probabilities))
    labels = report.labels
    for i, y in enumerate(labels):
        if y:
            ax.axvspan(i - 0.5, i + 0.5, color="tab:red", alpha=0.18, linewidth=0)
    ax.plot(idx, report.probabilities, lw=1.0, color="tab:blue", label="probability")
    ax.axhline(report.threshold, color="gray", ls="--", lw=0.8, label="threshold")
    ax.set_xlabel("window")
    ax.set_ylabel("probability")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{report.task}: F1={100 * report.f1:.2f}%")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_sweep_csv(path, rows: list[tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["output_length", "poa_f1"])
        for p, f1 in rows:
            writer.writerow([p, repr(f1)])


def render_sweep_figure(path, rows: list[tuple[int, float]]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot([r[0] for r in rows], [100 * r[1] for r in rows], marker="o", color="tab:blue")
    ax.set_xlabel("output length")
    ax.set_ylabel("precursor F1 (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(path, log_rows: list[dict]) -> None:
    if not log_rows:
        return
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    epochs = [r["epoch"] for r in log_rows]
    ax1.plot(epochs, [r["L_a"] for r in log_rows], label="anomaly loss")
    ax1.plot(epochs, [r["L_KD"] for r in log_rows], label="distillation loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [100 * r["val_f1_anomaly"] for r in log_rows], label="anomaly F1")
    ax2.plot(epochs, [100 * r["val_f1_poa"] for r in log_rows], label="precursor F1")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation F1 (%)")
    ax2.set_ylim(0, 102)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
