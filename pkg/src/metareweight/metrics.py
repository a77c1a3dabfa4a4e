"""Evaluation metrics: clean-test accuracy, corrupted-sample detection AUC,
and weight-distribution summaries.

The AUC treats *clean* samples as positives scored by their importance
weights: it is the probability that a uniformly random clean sample
outscores a uniformly random corrupted one, ties counting one half
(Mann-Whitney rank statistic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"prediction/label shape mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    return float(np.mean(p == y))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_noisy_detection(scores, is_corrupted) -> float:
    s = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(is_corrupted, dtype=bool)
    if s.shape != flags.shape or s.ndim != 1:
        raise ValueError("scores and corruption flags must be parallel 1-D arrays")
    n_clean = int(np.sum(~flags))
    n_corrupt = int(np.sum(flags))
    if n_clean == 0 or n_corrupt == 0:
        raise ValueError("AUC needs at least one clean and one corrupted sample")
    ranks = _average_ranks(s)
    u = ranks[~flags].sum() - n_clean * (n_clean + 1) / 2.0
    return float(u / (n_clean * n_corrupt))


@dataclass
class WeightSummary:
    mean_clean: float
    std_clean: float
    quantiles_clean: np.ndarray
    mean_corrupt: float
    std_corrupt: float
    quantiles_corrupt: np.ndarray
    gap: float  # mean_clean - mean_corrupt


def _subset_stats(w: np.ndarray):
    if w.size == 0:
        nanq = np.full(len(QUANTILE_LEVELS), np.nan)
        return float("nan"), float("nan"), nanq
    return float(w.mean()), float(w.std()), np.quantile(w, QUANTILE_LEVELS)


def weight_summary(weights, is_corrupted) -> WeightSummary:
    w = np.asarray(weights, dtype=np.float64)
    flags = np.asarray(is_corrupted, dtype=bool)
    if w.shape != flags.shape or w.size == 0:
        raise ValueError("weights and flags must be parallel nonempty arrays")
    mc, sc, qc = _subset_stats(w[~flags])
    mx, sx, qx = _subset_stats(w[flags])
    return WeightSummary(mc, sc, qc, mx, sx, qx, mc - mx)
