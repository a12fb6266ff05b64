"""Classification curve metrics: AUROC and AUPRC.

AUROC is the probability that a random positive outranks a random negative,
with ties counted one half (equivalently the trapezoidal ROC area, computed
here from midranks). AUPRC is the step-wise area under the precision-recall
curve with non-interpolated precision, walking thresholds in descending
score order.
"""

from __future__ import annotations

import numpy as np


class UndefinedMetricError(ValueError):
    """Both classes must be present for ranking metrics to be defined."""


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("need both a positive and a negative example")
    return scores, labels


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = _midranks(scores)
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) points at each distinct descending threshold."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    # keep only the last index of each tied block: all items >= threshold count
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    tp = tp_cum[distinct].astype(np.float64)
    predicted = (distinct + 1).astype(np.float64)
    recall = tp / n_pos
    precision = tp / predicted
    return recall, precision


def auprc(scores, labels) -> float:
    recall, precision = pr_curve(scores, labels)
    area = 0.0
    prev_recall = 0.0
    for r, p in zip(recall, precision):
        area += (r - prev_recall) * p
        prev_recall = r
    return area
