"""Window-level binary classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spline import InputError


@dataclass(frozen=True)
class EvalReport:
    task: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    probabilities: tuple[float, ...]
    labels: tuple[int, ...]

    @property
    def predictions(self) -> tuple[int, ...]:
        return tuple(int(p >= self.threshold) for p in self.probabilities)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "threshold": self.threshold,
            "probabilities": list(self.probabilities),
            "labels": list(self.labels),
        }


def _ratio(num: int, den: int, other_misses: int) -> float:
    # zero denominator: 1.0 when there was nothing to find and nothing was
    # found (vacuously perfect), 0.0 when the other count shows misses
    if den == 0:
        return 1.0 if other_misses == 0 else 0.0
    return num / den


def evaluate(probs, labels, threshold: float = 0.5, task: str = "anomaly") -> EvalReport:
    """Precision/recall/F1 of thresholded probabilities against 0/1 labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape != labels.shape or probs.ndim != 1 or probs.size < 1:
        raise InputError(f"probs {probs.shape} and labels {labels.shape} must be equal-length 1-D")
    preds = (probs >= threshold).astype(np.int64)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    precision = _ratio(tp, tp + fp, fn)
    recall = _ratio(tp, tp + fn, fp)
    f1 = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return EvalReport(task=task, precision=precision, recall=recall, f1=f1,
                      tp=tp, fp=fp, tn=tn, fn=fn, threshold=threshold,
                      probabilities=tuple(float(p) for p in probs),
                      labels=tuple(int(y) for y in labels))
