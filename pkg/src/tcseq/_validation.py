"""Input checks shared by the estimator classes and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .markov import Dataset, Trajectory


def check_lambda(lam) -> float:
    if not isinstance(lam, numbers.Real) or not 0.0 <= float(lam) <= 1.0:
        raise ValueError(f"lambda must be a real number in [0, 1], got {lam!r}")
    return float(lam)


def lookahead_to_lambda(lookahead: float) -> float:
    """Map an effective lookahead ``L >= 0`` to ``lambda = L / (1 + L)``."""
    if not lookahead >= 0:
        raise ValueError(f"lookahead must be nonnegative, got {lookahead!r}")
    if np.isinf(lookahead):
        return 1.0
    return float(lookahead) / (1.0 + float(lookahead))


def check_sequences(X, y=None, n_states=None, n_classes=None) -> Dataset:
    """Coerce ``(X, y)`` into a :class:`Dataset`.

    ``X`` may already be a Dataset (then ``y`` must be None), an iterable of
    :class:`Trajectory`, or an iterable of 1-based state sequences paired
    with 1-based labels ``y``. Missing dimensions are inferred from the
    largest index seen.
    """
    if isinstance(X, Dataset):
        if y is not None:
            raise ValueError("y must be None when X is a Dataset")
        if n_states is not None and n_states != X.M or n_classes is not None and n_classes != X.K:
            raise ValueError("n_states/n_classes disagree with the Dataset")
        return X
    X = list(X)
    if y is None:
        if not all(isinstance(t, Trajectory) for t in X):
            raise ValueError("y is required unless X holds Trajectory objects")
        trajs = X
    else:
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(f"X and y have inconsistent lengths: {len(X)} vs {y.shape}")
        trajs = [Trajectory(tuple(s), int(lab)) for s, lab in zip(X, y)]
    if not trajs:
        raise ValueError("no sequences given")
    M = n_states or max(max(t.states) for t in trajs)
    K = n_classes or max(t.label for t in trajs)
    return Dataset.from_trajectories(trajs, M, K)


def check_states(states, n_states: int) -> np.ndarray:
    """Validate 1-based state indices and return them 0-based."""
    arr = check_array(np.asarray(states).reshape(-1, 1), dtype=None, ensure_all_finite=True)
    arr = arr.ravel()
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError("state indices must be integers")
        arr = arr.astype(np.intp)
    if arr.min() < 1 or arr.max() > n_states:
        raise IndexError(f"state index outside [1..{n_states}]")
    return arr.astype(np.intp) - 1
