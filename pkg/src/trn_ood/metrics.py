"""Threshold-independent detection metrics and ID classification accuracy.

Convention throughout: the OOD class is the positive class and higher
scores mean "more OOD". Ties are handled exactly (rank averaging for
AUROC, threshold grouping for AUPR/FPR95), never by interpolation, so
every value here can be reproduced by a brute-force sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


class MetricError(ValueError):
    """Raised when a metric's preconditions are not met."""


def _check_binary(scores: np.ndarray, flags: np.ndarray, name: str,
                  need_both: bool = True) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags).astype(bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise MetricError(f"{name}: scores {scores.shape} vs flags {flags.shape}")
    if not np.all(np.isfinite(scores)):
        raise MetricError(f"{name}: scores must be finite")
    n_pos = int(flags.sum())
    n_neg = int(flags.size - n_pos)
    if n_pos == 0 or (need_both and n_neg == 0):
        raise MetricError(f"{name}: needs at least one OOD node"
                          + (" and one ID node" if need_both else "")
                          + f" (got {n_pos} OOD / {n_neg} ID)")
    return scores, flags


def auroc(scores, ood_flags) -> float:
    """P(score_OOD > score_ID) + 0.5 * P(equal), via tie-averaged ranks."""
    scores, flags = _check_binary(scores, ood_flags, "auroc")
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        # average 1-based rank of the tie group [i, j]
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int(flags.sum())
    n_neg = scores.size - n_pos
    rank_sum = ranks[flags].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, ood_flags) -> float:
    """Average precision over descending-score thresholds; tie groups move as one."""
    scores, flags = _check_binary(scores, ood_flags, "aupr", need_both=False)
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    f_sorted = flags[order]
    n_pos = int(flags.sum())
    ap = 0.0
    tp = 0
    total = 0
    prev_recall = 0.0
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += int(f_sorted[i:j + 1].sum())
        total += j - i + 1
        recall = tp / n_pos
        precision = tp / total
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def fpr95(scores, ood_flags, tpr_target: float = 0.95) -> float:
    """FPR over ID nodes at the first realized threshold reaching the TPR target.

    Sweeps the unique score values from high to low; the chosen threshold is
    the largest one with TPR >= tpr_target (flags are score >= threshold).
    """
    scores, flags = _check_binary(scores, ood_flags, "fpr95")
    n_pos = int(flags.sum())
    n_neg = scores.size - n_pos
    candidates = np.unique(scores)[::-1]
    for tau in candidates:
        sel = scores >= tau
        tpr = int((sel & flags).sum()) / n_pos
        if tpr >= tpr_target:
            return float(int((sel & ~flags).sum()) / n_neg)
    # unreachable: the smallest candidate selects everything (TPR = 1)
    raise AssertionError("fpr95: no threshold reached the TPR target")


def id_accuracy(logits, labels, mask) -> float:
    """Fraction of masked nodes whose argmax matches the label.

    Argmax ties resolve to the lowest class index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask).astype(bool)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or mask.shape != labels.shape:
        raise MetricError(f"id_accuracy: logits {logits.shape}, labels {labels.shape}, "
                          f"mask {mask.shape}")
    if not mask.any():
        raise MetricError("id_accuracy: empty mask")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


@dataclass(frozen=True)
class MetricReport:
    """One detector's numbers on one evaluation split."""

    auroc: float
    aupr: float
    fpr95: float
    id_acc: float
    n_id: int
    n_ood: int

    def to_dict(self) -> dict:
        return asdict(self)


def detection_report(scores, ood_flags, logits=None, labels=None, mask=None,
                     id_acc: float | None = None) -> MetricReport:
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(ood_flags).astype(bool)
    if id_acc is None:
        id_acc = id_accuracy(logits, labels, mask) if logits is not None else float("nan")
    return MetricReport(
        auroc=auroc(scores, flags),
        aupr=aupr(scores, flags),
        fpr95=fpr95(scores, flags),
        id_acc=float(id_acc),
        n_id=int((~flags).sum()),
        n_ood=int(flags.sum()),
    )
