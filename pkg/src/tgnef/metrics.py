"""Exact ranking metrics."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def _inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y.astype(bool)


def auc_roc(scores, labels) -> float:
    """P(random positive outranks random negative), ties count one half.

    Mann-Whitney form with mid-ranks, so it is exact for tied scores.
    """
    s, y = _inputs(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks for ties
    # mid-ranks are multiples of 1/2, so doubling keeps the sum integral
    u2 = int(round(2 * ranks[y].sum())) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive.

    Ranked by descending score; equal scores keep index order.
    """
    s, y = _inputs(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    rank = np.flatnonzero(hits) + 1
    # fsum is order-free, so any walk over the same precisions agrees bit-for-bit
    return math.fsum((np.arange(1, n_pos + 1) / rank).tolist()) / n_pos
