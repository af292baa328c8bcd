"""Ranking metrics.  Higher score means more anomalous."""

from __future__ import annotations

import numpy as np


def _check(scores, labels, need_neg=True):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not y.any() or (need_neg and y.all()):
        raise ValueError("undefined metric: both classes must be present")
    return s, y


def _midranks(s):
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    # boundaries of runs of equal values
    edges = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(s)]])
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with mid-ranks for ties."""
    s, y = _check(scores, labels)
    r = _midranks(s)
    n_pos, n_neg = y.sum(), (~y).sum()
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_counts(s, y):
    """Cumulative (tp, fp) at each distinct score, descending."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    return tp[last], fp[last]


def auprc(scores, labels) -> float:
    """Average precision: sum over thresholds of (recall step) x precision.

    Tied scores form one threshold, so an all-tied ranking scores the
    prevalence and untied rankings reduce to the mean precision at each
    positive's rank.
    """
    s, y = _check(scores, labels, need_neg=False)
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def tpr_at_fpr(scores, labels, fpr_cap: float = 0.01) -> float:
    """Largest TPR over thresholds whose FPR <= ``fpr_cap``; no interpolation."""
    s, y = _check(scores, labels)
    tp, fp = _threshold_counts(s, y)
    tpr = tp / y.sum()
    fpr = fp / (~y).sum()
    ok = fpr <= fpr_cap + 1e-15
    return float(tpr[ok].max()) if ok.any() else 0.0
