"""Confusion-matrix statistics and mean absolute error.

All ratios live in [0, 1] and any 0/0 ratio is reported as 0. Multi-class
problems are scored one-vs-rest per class and macro-averaged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f_measure", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def confusion(predictions, labels, cls: int) -> ConfusionCounts:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    p = predictions == cls
    t = labels == cls
    return ConfusionCounts(int(np.sum(p & t)), int(np.sum(p & ~t)),
                           int(np.sum(~p & ~t)), int(np.sum(~p & t)))


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def sensitivity(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.fn + c.tp)


def specificity(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fp)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def f_measure(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return _ratio(2.0 * p * r, p + r)


def mae(predicted, truth) -> float:
    """Mean of ``|predicted - truth|``."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValueError("need at least one value")
    return float(np.mean(np.abs(predicted - truth)))


def scores(c: ConfusionCounts) -> dict[str, float]:
    return {
        "accuracy": accuracy(c),
        "precision": precision(c),
        "recall": recall(c),
        "f_measure": f_measure(c),
        "sensitivity": sensitivity(c),
        "specificity": specificity(c),
    }


@dataclass
class MetricReport:
    per_class: dict[int, dict[str, float]]
    counts: dict[int, ConfusionCounts]
    macro: dict[str, float]
    overall_accuracy: float
    mae: float

    def to_dict(self, class_names=None) -> dict:
        name = (lambda c: class_names[c]) if class_names else str
        return {
            "macro": dict(self.macro),
            "overall_accuracy": self.overall_accuracy,
            "mae": self.mae,
            "per_class": {name(c): dict(v) for c, v in self.per_class.items()},
            "counts": {name(c): asdict(v) for c, v in self.counts.items()},
        }


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def macro_report(predictions, labels, classes, predicted_scores=None, truth_scores=None) -> MetricReport:
    """Per-class one-vs-rest metrics, their unweighted mean, and MAE.

    MAE defaults to the class ids themselves when no scores are supplied.
    """
    classes = list(classes)
    if not classes:
        raise ValueError("class set is empty")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    counts = {c: confusion(predictions, labels, c) for c in classes}
    per_class = {c: scores(k) for c, k in counts.items()}
    macro = {m: float(np.mean([per_class[c][m] for c in classes])) for m in METRIC_NAMES}
    if predicted_scores is None:
        predicted_scores, truth_scores = predictions, labels
    return MetricReport(per_class, counts, macro,
                        float(np.mean(predictions == labels)),
                        mae(predicted_scores, truth_scores))


def report_from_confusion(cm) -> MetricReport:
    """Rebuild a :class:`MetricReport` from a confusion matrix alone."""
    cm = np.asarray(cm)
    labels, preds = [], []
    for t in range(cm.shape[0]):
        for p in range(cm.shape[1]):
            labels += [t] * int(cm[t, p])
            preds += [p] * int(cm[t, p])
    return macro_report(preds, labels, range(cm.shape[0]))
