"""Report rendering: accuracy/loss curves, confusion-matrix images,
multi-architecture overlays, and the benchmark results table (CSV + text)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import ConfusionMatrix, MetricsReport
from .trainer import TrainingHistory

TABLE_COLUMNS = (
    "architecture",
    "tp",
    "tn",
    "fn",
    "fp",
    "accuracy",
    "sensitivity",
    "specificity",
    "precision",
    "f1",
)


@dataclass(frozen=True)
class ResultsRow:
    architecture: str
    tp: int
    tn: int
    fn: int
    fp: int
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float

    @classmethod
    def from_metrics(
        cls, architecture: str, cm: ConfusionMatrix, metrics: MetricsReport
    ) -> "ResultsRow":
        return cls(
            architecture=architecture,
            tp=cm.tp,
            tn=cm.tn,
            fn=cm.fn,
            fp=cm.fp,
            **metrics.as_percent_dict(),
        )


def render_results_csv(rows: list[ResultsRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.architecture,
                    row.tp,
                    row.tn,
                    row.fn,
                    row.fp,
                    f"{row.accuracy:.2f}",
                    f"{row.sensitivity:.2f}",
                    f"{row.specificity:.2f}",
                    f"{row.precision:.2f}",
                    f"{row.f1:.2f}",
                ]
            )


def parse_results_csv(path: str | Path) -> list[ResultsRow]:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                ResultsRow(
                    architecture=record["architecture"],
                    tp=int(record["tp"]),
                    tn=int(record["tn"]),
                    fn=int(record["fn"]),
                    fp=int(record["fp"]),
                    accuracy=float(record["accuracy"]),
                    sensitivity=float(record["sensitivity"]),
                    specificity=float(record["specificity"]),
                    precision=float(record["precision"]),
                    f1=float(record["f1"]),
                )
            )
    return rows


def render_results_text(rows: list[ResultsRow]) -> str:
    """Fixed-width table with the same column order as the CSV."""
    headers = (
        "Architecture",
        "TP",
        "TN",
        "FN",
        "FP",
        "Accuracy (%)",
        "Sensitivity (%)",
        "Specificity (%)",
        "Precision (%)",
        "F1 score (%)",
    )
    table = [headers]
    for row in rows:
        table.append(
            (
                row.architecture,
                str(row.tp),
                str(row.tn),
                str(row.fn),
                str(row.fp),
                f"{row.accuracy:.2f}",
                f"{row.sensitivity:.2f}",
                f"{row.specificity:.2f}",
                f"{row.precision:.2f}",
                f"{row.f1:.2f}",
            )
        )
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    lines = []
    for line in table:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def plot_history_curves(
    history: TrainingHistory, architecture: str, out_dir: str | Path, dpi: int = 120
) -> list[Path]:
    """Accuracy and loss curve images (train + validation) for one run."""
    if len(history) == 0:
        raise ValueError(f"history for {architecture} is empty; nothing to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = history.column("epoch")
    written = []
    for kind, train_col, val_col in (
        ("accuracy", "train_accuracy", "val_accuracy"),
        ("loss", "train_loss", "val_loss"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, history.column(train_col), label=f"training {kind}")
        ax.plot(epochs, history.column(val_col), label=f"validation {kind}")
        ax.set_xlabel("epoch")
        ax.set_ylabel(kind)
        ax.set_title(f"{architecture}: {kind}")
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{architecture}_{kind}.png"
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written


def plot_confusion_matrix(
    cm: ConfusionMatrix, architecture: str, out_dir: str | Path, dpi: int = 120
) -> Path:
    """2x2 heatmap with counts; rows are actual classes, columns predicted."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pos = cm.positive_class.value
    neg = "Normal" if pos == "Pneumonia" else "Pneumonia"
    grid = [[cm.tp, cm.fn], [cm.fp, cm.tn]]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    image = ax.imshow(grid, cmap="Blues")
    ax.set_xticks([0, 1], [pos, neg])
    ax.set_yticks([0, 1], [pos, neg])
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    ax.set_title(f"{architecture}: confusion matrix")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(grid[i][j]), ha="center", va="center", color="black")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = out_dir / f"{architecture}_confusion.png"
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def plot_overlays(
    histories: dict[str, TrainingHistory], out_dir: str | Path, dpi: int = 120
) -> list[Path]:
    """Combined accuracy and loss curves across architectures, one labeled
    series per model, with train and validation panels side by side."""
    if not histories:
        raise ValueError("no histories to overlay")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, train_col, val_col in (
        ("accuracy", "train_accuracy", "val_accuracy"),
        ("loss", "train_loss", "val_loss"),
    ):
        fig, (ax_train, ax_val) = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
        for name, history in histories.items():
            if len(history) == 0:
                continue
            epochs = history.column("epoch")
            ax_train.plot(epochs, history.column(train_col), label=name)
            ax_val.plot(epochs, history.column(val_col), label=name)
        ax_train.set_title(f"training {kind}")
        ax_val.set_title(f"validation {kind}")
        for ax in (ax_train, ax_val):
            ax.set_xlabel("epoch")
            ax.set_ylabel(kind)
        ax_val.legend(fontsize="small", loc="best")
        fig.tight_layout()
        path = out_dir / f"overlay_{kind}.png"
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written
