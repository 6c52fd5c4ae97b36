"""Confusion matrices and derived classification metrics.

Zero-denominator metrics are reported as None (undefined-marked) rather than
coerced to 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ClassMetrics:
    precision: float | None
    recall: float | None
    f1: float | None


@dataclass
class ConfusionMatrix:
    """counts[predicted][true] over a fixed label set."""

    labels: tuple
    counts: np.ndarray = None

    def __post_init__(self):
        k = len(self.labels)
        if self.counts is None:
            self.counts = np.zeros((k, k), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (k, k):
                raise ValidationError(f"counts shape {self.counts.shape} != ({k}, {k})")
            if (self.counts < 0).any():
                raise ValidationError("negative confusion counts")

    def add(self, predicted: Hashable, true: Hashable, n: int = 1) -> None:
        self.counts[self.labels.index(predicted), self.labels.index(true)] += n

    def add_many(self, predicted: Sequence[int], true: Sequence[int]) -> None:
        """Bulk add using integer label indices."""
        k = len(self.labels)
        flat = np.asarray(predicted, dtype=np.int64) * k + np.asarray(true, dtype=np.int64)
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValidationError("cannot merge matrices over different labels")
        return ConfusionMatrix(self.labels, self.counts + other.counts)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics(cm: ConfusionMatrix) -> tuple[dict, float | None]:
    """Per-class (precision, recall, f1) and overall accuracy."""
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    per_class: dict = {}
    for i, label in enumerate(cm.labels):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[i, :].sum()) - tp
        fn = int(cm.counts[:, i].sum()) - tp
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        if precision is None or recall is None or precision + recall == 0:
            f1 = None
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class[label] = ClassMetrics(precision, recall, f1)
    accuracy = _ratio(int(np.trace(cm.counts)), cm.total)
    return per_class, accuracy


def binary_metrics(tp: int, fp: int, fn: int) -> ClassMetrics:
    """Precision/recall/F1 straight from event-level tallies."""
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassMetrics(precision, recall, f1)
