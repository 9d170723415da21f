"""Confusion matrices, top-k accuracy, macro-F1 and plurality voting."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    top1_accuracy: float | None = None
    top2_accuracy: float | None = None

    def to_record(self) -> dict:
        return asdict(self)


def _labels(a, n_classes: int, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise MetricsError(f"{what} must be 1-D")
    if a.size and (a.min() < 0 or a.max() >= n_classes):
        raise MetricsError(f"{what} contain a label outside [0, {n_classes})")
    return a.astype(np.int64)


def confusion(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """Counts matrix with rows indexed by the true class, columns by the prediction."""
    t = _labels(true_labels, n_classes, "true labels")
    p = _labels(predicted_labels, n_classes, "predicted labels")
    if t.shape != p.shape:
        raise MetricsError(f"length mismatch: {t.size} true vs {p.size} predicted")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def ranked_classes(scores, k: int) -> np.ndarray:
    """Top-``k`` class indices per row, best first, ties to the lower index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n = scores.shape[1]
    if not 1 <= k <= n:
        raise MetricsError(f"k={k} outside [1, {n}]")
    # stable sort on negated scores keeps ascending index order among ties
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def topk_accuracy(score_rows, true_labels, k: int) -> float:
    scores = np.asarray(score_rows, dtype=np.float64)
    if scores.size == 0:
        raise MetricsError("top-k accuracy of an empty prediction set is undefined")
    scores = np.atleast_2d(scores)
    y = _labels(true_labels, scores.shape[1], "true labels")
    if y.size != scores.shape[0]:
        raise MetricsError("one true label per score row is required")
    top = ranked_classes(scores, k)
    return float(np.mean(np.any(top == y[:, None], axis=1)))


def macro_f1(cm) -> MetricsReport:
    """Per-class precision/recall/F1 and their unweighted mean; 0/0 counts as 0."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or np.any(cm < 0):
        raise MetricsError("confusion matrix must be square and nonnegative")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    # 2 / (1/p + 1/r) rewritten as 2pr / (p + r) so zeros stay finite
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return MetricsReport(
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        macro_f1=float(f1.mean()),
    )


def evaluate_scores(scores, true_labels) -> MetricsReport:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n = scores.shape[1]
    pred = ranked_classes(scores, 1)[:, 0]
    report = macro_f1(confusion(true_labels, pred, n))
    report.top1_accuracy = topk_accuracy(scores, true_labels, 1)
    report.top2_accuracy = topk_accuracy(scores, true_labels, min(2, n))
    return report


def majority_vote(probabilities: Sequence[np.ndarray]) -> np.ndarray:
    """Plurality of per-model top-1 votes.

    ``probabilities`` holds one ``(n_samples, n_classes)`` softmax array per
    model.  Tied vote counts go to the class with the larger mean probability
    across models, and remaining ties to the lowest class index.
    """
    if len(probabilities) == 0:
        raise MetricsError("majority vote needs at least one model")
    probs = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in probabilities]
    shape = probs[0].shape
    if any(p.shape != shape for p in probs):
        raise MetricsError("all models must score the same samples and classes")
    stack = np.stack(probs)
    n_samples, n_classes = shape
    votes = np.zeros((n_samples, n_classes), dtype=np.int64)
    rows = np.arange(n_samples)
    for p in stack:
        votes[rows, ranked_classes(p, 1)[:, 0]] += 1
    mean_prob = stack.mean(axis=0)
    top_votes = votes.max(axis=1, keepdims=True)
    tie_score = np.where(votes == top_votes, mean_prob, -np.inf)
    return ranked_classes(tie_score, 1)[:, 0]
