"""Threshold-free link prediction metrics, computed exactly at 64-bit.

roc_auc uses the rank formulation with half credit for tied pairs; pr_auc
integrates the precision-recall curve with the right-step rule, processing
tied scores as a single block. brute_force_roc_auc is the literal pairwise
definition, kept as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MetricReport", "roc_auc", "pr_auc", "brute_force_roc_auc"]


@dataclass(frozen=True)
class MetricReport:
    roc_auc: float
    pr_auc: float
    positives: int
    negatives: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.roc_auc <= 1.0 and 0.0 <= self.pr_auc <= 1.0):
            raise ValueError("AUC values must lie in [0, 1]")
        if self.positives <= 0 or self.negatives < 0:
            raise ValueError("counts must be positive")


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1 or s.shape[0] == 0:
        raise ValueError("scores and labels must be equal-length non-empty vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties half."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.shape[0], dtype=np.float64)
    sorted_scores = s[order]
    # average rank within each tie block (1-based ranks)
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve by the step rule."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("pr_auc needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_desc = s[order]
    y_desc = y[order]
    tp = np.cumsum(y_desc)
    fp = np.cumsum(1 - y_desc)
    # keep only the last index of each tied block: the curve moves one block
    # at a time, never through the middle of a tie
    block_end = np.flatnonzero(np.append(np.diff(s_desc) != 0, True))
    recall = tp[block_end] / n_pos
    precision = tp[block_end] / (tp[block_end] + fp[block_end])
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def brute_force_roc_auc(scores, labels) -> float:
    """Explicit loop over all positive-negative pairs; oracle for roc_auc."""
    s, y = _validate(scores, labels)
    if s.shape[0] > 10_000:
        raise ValueError("brute-force oracle limited to 10^4 samples")
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("need at least one positive and one negative")
    credit = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                credit += 1.0
            elif p == q:
                credit += 0.5
    return credit / (pos.shape[0] * neg.shape[0])
