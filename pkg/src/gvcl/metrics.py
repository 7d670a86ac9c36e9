"""Continual-learning metrics and expected calibration error.

R[i][j] is accuracy on task j after sequentially training through task i
(lower-triangular); r_ind[j] is the single-task reference accuracy.
FWT/BWT sums run over every task index, so R[0][0] is not assumed to
equal r_ind[0].
"""

from __future__ import annotations

import numpy as np


def _check_matrix(r):
    t = len(r)
    if t == 0:
        raise ValueError("empty result matrix")
    for i, row in enumerate(r):
        if len(row) != i + 1:
            raise ValueError(f"row {i} has {len(row)} entries, expected {i + 1}")
    return t


def acc(r) -> float:
    """Mean accuracy over all tasks after the final one was trained."""
    t = _check_matrix(r)
    return float(np.mean(r[t - 1]))


def bwt(r) -> float:
    """Mean accuracy change between when a task was learned and the end."""
    t = _check_matrix(r)
    return float(np.mean([r[t - 1][j] - r[j][j] for j in range(t)]))


def fwt(r, r_ind) -> float:
    """Mean gain of just-learned accuracy over independent training."""
    t = _check_matrix(r)
    if len(r_ind) != t:
        raise ValueError("r_ind length does not match matrix")
    return float(np.mean([r[j][j] - r_ind[j] for j in range(t)]))


def net_gain(r, r_ind) -> float:
    """Total gain over separate training: FWT + BWT."""
    return fwt(r, r_ind) + bwt(r)


net = net_gain


def delta_acc(r, i) -> float:
    """Mean accuracy drop on the first i tasks from step i to the end."""
    t = _check_matrix(r)
    if not 1 <= i <= t:
        raise ValueError(f"i must be in [1, {t}], got {i}")
    return float(np.mean([r[i - 1][j] - r[t - 1][j] for j in range(i)]))


def ece(confidences, correctness, bins=15):
    """Expected calibration error over equal-width confidence bins."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correctness = np.asarray(correctness, dtype=np.float64)
    if confidences.size == 0:
        raise ValueError("ece: empty input")
    if confidences.shape != correctness.shape:
        raise ValueError("ece: confidence and correctness lengths differ")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(confidences, edges[1:-1]), 0, bins - 1)
    total = 0.0
    n = confidences.size
    for b in range(bins):
        mask = idx == b
        nb = mask.sum()
        if nb == 0:
            continue
        total += nb / n * abs(confidences[mask].mean() - correctness[mask].mean())
    return float(total)


def calibration_curve(confidences, correctness, bins=15):
    """Per-bin (mean confidence, accuracy, count) rows for plotting."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correctness = np.asarray(correctness, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(confidences, edges[1:-1]), 0, bins - 1)
    rows = []
    for b in range(bins):
        mask = idx == b
        nb = int(mask.sum())
        if nb == 0:
            rows.append((b, float("nan"), float("nan"), 0))
        else:
            rows.append((b, float(confidences[mask].mean()), float(correctness[mask].mean()), nb))
    return rows
