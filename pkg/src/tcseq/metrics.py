"""Evaluation of incremental classifiers on held-out trajectories.

Every metric takes a list of :class:`EvalRecord` (per-prefix predicted
distributions plus the true label) and a prefix length. A trajectory
shorter than the requested prefix is scored at its last prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .losses import LOG_CLAMP, kl_divergence


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EvalRecord:
    """``probs[t]`` is the distribution after ``t + 1`` elements; ``label`` is 1-based."""

    probs: np.ndarray
    label: int

    def __post_init__(self):
        probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if not np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-9):
            raise ValueError("each predicted distribution must sum to 1")
        if not 1 <= int(self.label) <= probs.shape[1]:
            raise ValueError(f"label {self.label} outside [1..{probs.shape[1]}]")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "label", int(self.label))

    def at(self, prefix_len: int | None) -> np.ndarray:
        T = self.probs.shape[0]
        t = T if prefix_len is None else min(int(prefix_len), T)
        return self.probs[t - 1]


def records_from_model(probability_table, data) -> list[EvalRecord]:
    """Records for every trajectory of ``data`` under a state -> distribution table."""
    table = np.asarray(probability_table, dtype=float)
    return [
        EvalRecord(table[data.states[data.offsets[n] : data.offsets[n + 1]]], data.labels[n] + 1)
        for n in range(len(data))
    ]


def _stack(records, prefix_len):
    if not records:
        raise ValueError("records must be nonempty")
    if prefix_len is not None and int(prefix_len) < 1:
        raise ValueError("prefix_len must be at least 1")
    scores = np.stack([r.at(prefix_len) for r in records])
    labels = np.array([r.label for r in records]) - 1
    return scores, labels


def accuracy(records, prefix_len: int | None = None) -> float:
    """Fraction of records whose argmax (ties to lowest class) is the label."""
    scores, labels = _stack(records, prefix_len)
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def mean_nll(records, prefix_len: int | None = None) -> float:
    scores, labels = _stack(records, prefix_len)
    p = np.maximum(scores[np.arange(len(labels)), labels], LOG_CLAMP)
    return float(-np.mean(np.log(p)))


def roc_auc_ovr_macro(records, prefix_len: int | None = None, return_skipped: bool = False):
    """One-vs-rest ROC AUC averaged over classes.

    For class ``k`` the score is the probability given to ``k``; the AUC is
    the fraction of (positive, negative) pairs ranked correctly, ties
    counting one half, computed from average ranks. Classes without both
    positives and negatives are skipped (returned when ``return_skipped``).
    """
    scores, labels = _stack(records, prefix_len)
    aucs, skipped = [], []
    for k in range(scores.shape[1]):
        pos = labels == k
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            skipped.append(k + 1)
            continue
        ranks = rankdata(scores[:, k])
        # twice the Mann-Whitney U keeps every intermediate an exact integer
        u2 = 2.0 * ranks[pos].sum() - n_pos * (n_pos + 1)
        aucs.append(u2 / (2.0 * n_pos * n_neg))
    if not aucs:
        raise UndefinedMetricError("no class has both positive and negative examples")
    auc = sum(aucs) / len(aucs)
    return (auc, skipped) if return_skipped else auc


def mean_successive_kl(records) -> float:
    """Average ``KL[p_{t+1} || p_t]`` over all successive prefix pairs.

    Records of length one contribute no pairs; 0.0 if there are none.
    """
    total, count = 0.0, 0
    for r in records:
        for t in range(r.probs.shape[0] - 1):
            total += kl_divergence(r.probs[t + 1], r.probs[t])
            count += 1
    return total / count if count else 0.0


def metric_table(records, prefix_lens) -> list[dict]:
    """Rows for the metrics CSV; AUC is NaN where undefined."""
    rows = []
    kl = mean_successive_kl(records)
    for L in prefix_lens:
        try:
            auc = roc_auc_ovr_macro(records, L)
        except UndefinedMetricError:
            auc = math.nan
        rows.append(
            {
                "prefix_len": "full" if L is None else int(L),
                "accuracy": accuracy(records, L),
                "nll": mean_nll(records, L),
                "roc_auc": auc,
                "mean_kl": kl,
            }
        )
    return rows
