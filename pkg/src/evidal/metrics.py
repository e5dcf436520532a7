"""Ranking metrics for multi-label evaluation.

AUROC is the Mann-Whitney statistic (ties count half) computed from average
ranks; AUPRC is average precision with tied scores collapsed onto a single
threshold.  Classes whose labels are all-positive or all-negative are skipped
and excluded from macro averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsBundle:
    per_class_auroc: dict[int, float] = field(default_factory=dict)
    per_class_auprc: dict[int, float] = field(default_factory=dict)
    skipped_classes: list[int] = field(default_factory=list)
    macro_auroc: float = float("nan")
    macro_auprc: float = float("nan")


def _validate(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    n = scores.size
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0.0) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [n]))
    mean_ranks = 0.5 * (starts + stops - 1) + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(mean_ranks, stops - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties 0.5).

    Undefined when either label is absent; raises in that case, callers skip
    such classes.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs at least one positive and one negative")
    ranks = _average_ranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision: mean over positives of precision at their threshold.

    Descending sweep over distinct scores; every sample with a tied score
    enters at the same threshold.  All-equal scores give the prevalence.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("auprc needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0.0) + 1
    stops = np.concatenate((boundaries, [scores.size]))
    cum_pos = np.cumsum(sorted_labels)
    pos_at_stop = cum_pos[stops - 1]
    group_pos = np.diff(pos_at_stop, prepend=0)
    precision = pos_at_stop / stops
    return float((group_pos * precision).sum() / n_pos)


def compute_bundle(scores, labels) -> MetricsBundle:
    """Per-class metrics for (N, K) score and label matrices, macro-averaged
    over the classes that have both label values."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ValueError("compute_bundle expects matching (N, K) matrices")
    bundle = MetricsBundle()
    for k in range(scores.shape[1]):
        col = labels[:, k]
        if col.min() == col.max():
            bundle.skipped_classes.append(k)
            continue
        bundle.per_class_auroc[k] = auroc(scores[:, k], col)
        bundle.per_class_auprc[k] = auprc(scores[:, k], col)
    if bundle.per_class_auroc:
        bundle.macro_auroc = float(np.mean(list(bundle.per_class_auroc.values())))
        bundle.macro_auprc = float(np.mean(list(bundle.per_class_auprc.values())))
    return bundle
