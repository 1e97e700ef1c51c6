"""Confusion matrices and the five benchmark metrics.

Metrics are computed with exact rational arithmetic and reported as
percentages rounded half-up to two decimals; the unrounded ratios are kept
alongside. A zero denominator yields 0.0 for that metric plus a flag in the
report rather than an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .dataset import Label
from .preprocess import PreprocessConfig

if TYPE_CHECKING:
    from .dataset import LabeledDataset
    from .model_zoo import ModelHandle

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int
    positive_class: Label = Label.PNEUMONIA

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def with_positive_class(self, positive_class: Label) -> "ConfusionMatrix":
        """Recast the counts for the other positive class (swaps tp<->tn, fp<->fn)."""
        if positive_class == self.positive_class:
            return self
        return ConfusionMatrix(
            tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp, positive_class=positive_class
        )

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "tn": self.tn,
            "fn": self.fn,
            "fp": self.fp,
            "positive_class": self.positive_class.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConfusionMatrix":
        return cls(
            tp=int(data["tp"]),
            tn=int(data["tn"]),
            fp=int(data["fp"]),
            fn=int(data["fn"]),
            positive_class=Label.from_string(data.get("positive_class", "Pneumonia")),
        )


@dataclass(frozen=True)
class MetricsReport:
    """Percentages rounded to two decimals plus the raw (unrounded) ratios."""

    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    zero_denominator: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict)

    def as_percent_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "percent": self.as_percent_dict(),
            "raw": self.raw,
            "zero_denominator": list(self.zero_denominator),
        }


def _percent(value: Fraction) -> float:
    with localcontext() as ctx:
        ctx.prec = 40
        exact = Decimal(value.numerator) * 100 / Decimal(value.denominator)
        return float(exact.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def confusion_matrix(
    predicted: Sequence[Label],
    actual: Sequence[Label],
    positive_class: Label = Label.PNEUMONIA,
) -> ConfusionMatrix:
    """Count agreement between equal-length predicted and actual label lists."""
    if len(predicted) != len(actual):
        raise ValueError(
            f"predicted and actual lengths differ: {len(predicted)} vs {len(actual)}"
        )
    if not predicted:
        raise ValueError("cannot build a confusion matrix from empty label lists")
    tp = tn = fp = fn = 0
    for pred, act in zip(predicted, actual):
        if act == positive_class:
            if pred == positive_class:
                tp += 1
            else:
                fn += 1
        else:
            if pred == positive_class:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn, positive_class=positive_class)


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, sensitivity, specificity, precision, and F1 from raw counts."""
    if cm.total == 0:
        raise ValueError("confusion matrix has zero total count")

    flags: list[str] = []

    def ratio(numerator: int, denominator: int, name: str) -> Fraction:
        if denominator == 0:
            flags.append(name)
            return Fraction(0)
        return Fraction(numerator, denominator)

    accuracy = Fraction(cm.tp + cm.tn, cm.total)
    sensitivity = ratio(cm.tp, cm.tp + cm.fn, "sensitivity")
    specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity")
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    if sensitivity + precision == 0:
        flags.append("f1")
        f1 = Fraction(0)
    else:
        f1 = 2 * sensitivity * precision / (sensitivity + precision)

    raw = {
        "accuracy": float(accuracy),
        "sensitivity": float(sensitivity),
        "specificity": float(specificity),
        "precision": float(precision),
        "f1": float(f1),
    }
    return MetricsReport(
        accuracy=_percent(accuracy),
        sensitivity=_percent(sensitivity),
        specificity=_percent(specificity),
        precision=_percent(precision),
        f1=_percent(f1),
        zero_denominator=tuple(flags),
        raw=raw,
    )


def save_confusion_csv(cm: ConfusionMatrix, path) -> None:
    """2x2 CSV: rows are actual classes, columns predicted, positive class first."""
    import csv

    pos = cm.positive_class.value
    neg = "Normal" if pos == "Pneumonia" else "Pneumonia"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual\\predicted", pos, neg])
        writer.writerow([pos, cm.tp, cm.fn])
        writer.writerow([neg, cm.fp, cm.tn])


def load_confusion_csv(path) -> ConfusionMatrix:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 3 or len(rows[0]) != 3:
        raise ValueError(f"{path} is not a 2x2 confusion matrix CSV")
    positive = Label.from_string(rows[0][1])
    return ConfusionMatrix(
        tp=int(rows[1][1]),
        fn=int(rows[1][2]),
        fp=int(rows[2][1]),
        tn=int(rows[2][2]),
        positive_class=positive,
    )


def predict_probabilities(
    model: "ModelHandle",
    ds: "LabeledDataset",
    preprocess_cfg: PreprocessConfig | None = None,
    batch_size: int = 32,
) -> np.ndarray:
    """Sigmoid outputs for every sample in canonical dataset order."""
    from .augment import preprocessed_batches

    pre = preprocess_cfg or PreprocessConfig()
    outputs = []
    for images, _ in preprocessed_batches(ds, batch_size, pre):
        outputs.append(np.asarray(model.predict(images)).reshape(-1))
    return np.concatenate(outputs)


def predict_labels(
    model: "ModelHandle",
    ds: "LabeledDataset",
    threshold: float = 0.5,
    preprocess_cfg: PreprocessConfig | None = None,
    batch_size: int = 32,
) -> tuple[Label, ...]:
    """Classify each sample as Pneumonia iff its sigmoid output >= threshold."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    probs = predict_probabilities(model, ds, preprocess_cfg, batch_size)
    return tuple(Label.PNEUMONIA if p >= threshold else Label.NORMAL for p in probs)
