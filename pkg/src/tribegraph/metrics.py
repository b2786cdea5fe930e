"""Binary classification metrics (F1 on the positive class, ROC AUC)."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import OneClassOnly


def _binary(y) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)


def confusion(preds, y) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)``."""
    p = _binary(preds)
    y = _binary(y)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    return tp, fp, fn, tn


def precision_recall(preds, y) -> tuple[float, float]:
    tp, fp, fn, _ = confusion(preds, y)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def compute_f1(preds, y) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    precision, recall = precision_recall(preds, y)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compute_auc(scores, y) -> float:
    """Mann-Whitney form of ROC AUC: ties between classes count one half."""
    y = _binary(y)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_report(scores, y, threshold: float = 0.5) -> dict:
    y = _binary(y)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    preds = (scores >= threshold).astype(np.int64)
    precision, recall = precision_recall(preds, y)
    try:
        auc = compute_auc(scores, y)
    except OneClassOnly:
        auc = float("nan")
    return {
        "f1": compute_f1(preds, y),
        "auc": auc,
        "precision": precision,
        "recall": recall,
        "accuracy": float(np.mean(preds == y)) if len(y) else 0.0,
    }
