"""Soft targets and cross-entropy losses for incremental classifiers.

For a trajectory of length ``T`` with label ``y`` and reference predictions
``p'_t`` (held constant), the TC-lambda targets are::

    z_T = onehot(y)
    z_t = lam * z_{t+1} + (1 - lam) * p'_{t+1}        for t < T

``lam = 1`` gives the hard label everywhere (direct cross-entropy) and
``lam = 0`` gives the next prefix's prediction (temporal consistency).
The per-sequence loss averages ``H[z_t || softmax(logits_t)]`` over ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_lambda

LOG_CLAMP = 1e-300


def softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _safe_log(q):
    return np.log(np.maximum(np.asarray(q, dtype=float), LOG_CLAMP))


def cross_entropy(p, q) -> float:
    """``-sum_k p_k log q_k``, with ``q`` clamped at 1e-300 inside the log."""
    p = np.asarray(p, dtype=float)
    return float(-np.sum(p * _safe_log(q)))


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def kl_divergence(p, q) -> float:
    """``KL[p || q]``; terms with ``p_k = 0`` contribute nothing."""
    p = np.asarray(p, dtype=float)
    nz = p > 0
    val = float(np.sum(p[nz] * (np.log(p[nz]) - _safe_log(np.asarray(q, dtype=float)[nz]))))
    return max(val, 0.0)


@dataclass(frozen=True, eq=False)
class TargetSchedule:
    """Per-prefix soft targets ``z_1..z_T`` as a ``(T, K)`` array."""

    targets: np.ndarray
    lam: float

    def __len__(self):
        return self.targets.shape[0]


def _onehot(label: int, K: int) -> np.ndarray:
    if not 1 <= label <= K:
        raise IndexError(f"label {label} outside [1..{K}]")
    z = np.zeros(K)
    z[label - 1] = 1.0
    return z


def _as_next_table(probs_next, n_classes):
    probs_next = np.asarray(probs_next, dtype=float)
    if probs_next.ndim == 2:
        return probs_next
    if probs_next.size == 0:
        if n_classes is None:
            raise ValueError("n_classes is required when probs_next is empty")
        return np.zeros((0, n_classes))
    raise ValueError("probs_next must be a (T - 1, K) array")


def compute_targets(probs_next, label: int, lam: float, n_classes: int | None = None) -> TargetSchedule:
    """Backward recursion for the TC-lambda targets.

    Parameters
    ----------
    probs_next : array of shape (T - 1, K)
        Reference distributions for prefixes ``2..T``. May be empty for a
        length-1 trajectory, in which case pass ``n_classes``.
    label : int
        1-based class of the trajectory.
    lam : float in [0, 1]
    """
    lam = check_lambda(lam)
    probs_next = _as_next_table(probs_next, n_classes)
    K = probs_next.shape[1]
    T = probs_next.shape[0] + 1
    z = np.empty((T, K))
    z[-1] = _onehot(label, K)
    for t in range(T - 2, -1, -1):
        z[t] = lam * z[t + 1] + (1.0 - lam) * probs_next[t]
    return TargetSchedule(z, lam)


def compute_targets_closed_form(probs_next, label: int, lam: float, n_classes: int | None = None) -> TargetSchedule:
    """Same targets written as an explicit geometric sum.

    ``z_t = lam^(T-t) onehot(y) + (1 - lam) sum_{k=1}^{T-t} lam^(k-1) p'_{t+k}``
    """
    lam = check_lambda(lam)
    probs_next = _as_next_table(probs_next, n_classes)
    K = probs_next.shape[1]
    T = probs_next.shape[0] + 1
    onehot = _onehot(label, K)
    z = np.empty((T, K))
    for t in range(1, T + 1):
        acc = lam ** (T - t) * onehot
        for k in range(1, T - t + 1):
            # probs_next[j] holds prefix j + 2
            acc = acc + (1.0 - lam) * lam ** (k - 1) * probs_next[t + k - 2]
        z[t - 1] = acc
    return TargetSchedule(z, lam)


def _check_lengths(logits, schedule):
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2 or logits.shape != schedule.targets.shape:
        raise ValueError(
            f"logits shape {logits.shape} does not match targets {schedule.targets.shape}"
        )
    return logits


def sequence_loss(logits, schedule: TargetSchedule) -> float:
    """Mean over prefixes of ``H[z_t || softmax(logits_t)]``."""
    logits = _check_lengths(logits, schedule)
    logp = log_softmax(logits, axis=1)
    return float(-np.sum(schedule.targets * logp) / logits.shape[0])


def sequence_loss_grad(logits, schedule: TargetSchedule) -> np.ndarray:
    """Gradient of :func:`sequence_loss` in the logits, targets held fixed."""
    logits = _check_lengths(logits, schedule)
    return (softmax(logits, axis=1) - schedule.targets) / logits.shape[0]
