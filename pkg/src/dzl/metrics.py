"""Ranking metrics for DZL scores.

Orientation: ``y_true`` is 1 for abnormal (positive) and 0 for normal, and
a *lower* score means *more* abnormal. Internally samples are ranked by
``-score``.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _prepare(y_true, scores):
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.shape != y.shape:
        raise ValueError(f"y_true and scores must be 1-D of equal length, got {y.shape} and {s.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y_true must be binary (1 = abnormal)")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return y.astype(np.int64), s


def _require_both_classes(y):
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("AUC is undefined: need at least one abnormal and one normal sample")
    return n_pos, y.size - n_pos


def auc(y_true, scores):
    """Probability that a random abnormal sample scores below a random normal one.

    Ties count one half (Mann-Whitney U over the rank sum).
    """
    y, s = _prepare(y_true, scores)
    n_pos, n_neg = _require_both_classes(y)
    ranks = rankdata(-s)  # average ranks, high rank = more abnormal
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(y_true, scores):
    """``sum_i (R_i - R_{i-1}) P_i`` over a sweep in order of ascending score.

    Every sample is its own cut-off; tied scores keep input order.
    """
    y, s = _prepare(y_true, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without abnormal samples")
    order = np.argsort(s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, y.size + 1)
    return float(np.sum(precision[hits == 1]) / n_pos)


def roc_points(y_true, scores):
    """ROC curve as an (n, 2) array of (FPR, TPR), from (0, 0) to (1, 1).

    Thresholds sweep the distinct scores from the lowest up; tied scores
    move the curve diagonally in one step.
    """
    y, s = _prepare(y_true, scores)
    n_pos, n_neg = _require_both_classes(y)
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(1 - y_sorted)[last_of_group]
    pts = np.column_stack([np.r_[0, fp] / n_neg, np.r_[0, tp] / n_pos])
    return pts


def trapezoid_area(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def accuracy(y_true, y_pred):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    return float(np.mean(y_true == y_pred))


def youden_threshold(y_true, scores):
    """Threshold maximising TPR - FPR for the call ``abnormal iff score < t``.

    Candidates are midpoints between consecutive distinct scores; the first
    maximiser (lowest threshold) wins. The result is clipped into (0, 1).
    """
    y, s = _prepare(y_true, scores)
    n_pos, n_neg = _require_both_classes(y)
    u = np.unique(s)
    cands = np.r_[u[0] - 1e-6, (u[1:] + u[:-1]) / 2.0, u[-1] + 1e-6]
    calls = s[None, :] < cands[:, None]
    tpr = (calls & (y == 1)).sum(axis=1) / n_pos
    fpr = (calls & (y == 0)).sum(axis=1) / n_neg
    best = cands[int(np.argmax(tpr - fpr))]
    return float(np.clip(best, 1e-6, 1.0 - 1e-6))
