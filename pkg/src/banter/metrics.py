"""Confusion counts and the derived precision/recall/F1/accuracy.

The positive class is the sarcastic or humorous label; every metric is
reported on it. Zero denominators yield 0.0 rather than an error.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts; total must be positive."""

    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(
                    f"{name} must be a non-negative integer, got {value!r}")
        if self.total == 0:
            raise ValueError("confusion matrix cannot be empty")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn}


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float

    def as_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "accuracy": self.accuracy}


def compute_metrics(matrix: ConfusionMatrix) -> Metrics:
    """Positive-class precision, recall, F1, and overall accuracy."""
    predicted_pos = matrix.tp + matrix.fp
    actual_pos = matrix.tp + matrix.fn
    precision = matrix.tp / predicted_pos if predicted_pos else 0.0
    recall = matrix.tp / actual_pos if actual_pos else 0.0
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0.0 else 0.0)
    accuracy = (matrix.tp + matrix.tn) / matrix.total
    return Metrics(precision=precision, recall=recall, f1=f1,
                   accuracy=accuracy)


def confusion(preds: list[int], labels: list[int]) -> ConfusionMatrix:
    """Count binary prediction outcomes against gold labels."""
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions "
                         f"vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("cannot build a confusion matrix from no pairs")
    tp = fn = fp = tn = 0
    for k, (pred, label) in enumerate(zip(preds, labels)):
        if pred not in (0, 1) or label not in (0, 1):
            raise ValueError(f"pair {k} is not binary: ({pred!r}, {label!r})")
        if label == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        elif pred == 1:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)
