"""Direct and indirect (temporally consistent) estimators of ``P*``.

The direct estimate of row ``m`` is the label distribution over every
visit to ``m``. The indirect estimate builds the empirical chain
``(Q_hat, R_hat)`` from one-hop transition counts and solves it exactly,
which pools information across trajectories that cross the same states.

Repeat visits count once per occurrence. States never visited (or never
a transition source) get uniform rows and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_sequences, check_states
from .markov import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Dataset,
    MarkovChain,
    iterate_fixed_point,
    uniform_rows,
)


@dataclass(frozen=True, eq=False)
class EmpiricalChain:
    Qhat: np.ndarray
    Rhat: np.ndarray
    visit_counts: np.ndarray

    @property
    def unvisited(self) -> frozenset:
        """1-based states that are never the source of a transition."""
        return frozenset(int(m) + 1 for m in np.flatnonzero(self.visit_counts == 0))

    def to_chain(self) -> MarkovChain:
        return MarkovChain(self.Qhat, self.Rhat)


@dataclass(frozen=True, eq=False)
class EstimateReport:
    estimate: np.ndarray
    per_state_support: np.ndarray
    method: str  # "direct" | "indirect"

    @property
    def fallback(self) -> np.ndarray:
        return self.per_state_support == 0


def estimate_direct(data: Dataset) -> EstimateReport:
    pos = data.positions()
    counts = np.zeros((data.M, data.K))
    np.add.at(counts, (pos["state"], pos["label"]), 1.0)
    support = counts.sum(axis=1)
    est = uniform_rows(data.M, data.K)
    seen = support > 0
    est[seen] = counts[seen] / support[seen, None]
    return EstimateReport(est, support.astype(np.int64), "direct")


def build_empirical_chain(data: Dataset) -> EmpiricalChain:
    """Empirical one-hop chain.

    ``Q_hat[m, m']`` and ``R_hat[m, k]`` are transition counts out of ``m``
    divided by ``c_m``, the number of transitions (to a transient state or
    to a label) leaving ``m``. Rows with ``c_m = 0`` absorb uniformly.
    """
    pos = data.positions()
    M, K = data.M, data.K
    last = pos["is_last"]
    q_counts = np.zeros((M, M))
    r_counts = np.zeros((M, K))
    np.add.at(q_counts, (pos["state"][~last], pos["next_state"][~last]), 1.0)
    np.add.at(r_counts, (pos["state"][last], pos["label"][last]), 1.0)
    c = q_counts.sum(axis=1) + r_counts.sum(axis=1)
    seen = c > 0
    Qhat = np.zeros((M, M))
    Rhat = uniform_rows(M, K)
    Qhat[seen] = q_counts[seen] / c[seen, None]
    Rhat[seen] = r_counts[seen] / c[seen, None]
    return EmpiricalChain(Qhat, Rhat, c.astype(np.int64))


def estimate_indirect(
    data: Dataset, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS
) -> EstimateReport:
    """Absorption probabilities of the empirical chain, by fixed-point iteration."""
    emp = build_empirical_chain(data)
    P, _ = iterate_fixed_point(
        emp.Qhat, emp.Rhat, uniform_rows(data.M, data.K), tol, max_iters
    )
    return EstimateReport(P, emp.visit_counts, "indirect")


class _TabularEstimator(BaseEstimator):
    """Shared fit/predict plumbing for the count-based estimators."""

    def __init__(self, n_states=None, n_classes=None):
        self.n_states = n_states
        self.n_classes = n_classes

    def fit(self, X, y=None):
        """Fit on 1-based state sequences ``X`` with labels ``y`` (or a Dataset)."""
        data = check_sequences(X, y, self.n_states, self.n_classes)
        report = self._estimate(data)
        self.probabilities_ = report.estimate
        self.support_ = report.per_state_support
        self.n_states_, self.n_classes_ = data.M, data.K
        self.classes_ = np.arange(1, data.K + 1)
        return self

    def predict_proba(self, states):
        check_is_fitted(self, "probabilities_")
        return self.probabilities_[check_states(states, self.n_states_)]

    def predict(self, states):
        # argmax ties go to the lowest class index
        return self.classes_[np.argmax(self.predict_proba(states), axis=1)]

    def predict_sequence_proba(self, sequences):
        """Per-prefix class distributions, one ``(T, K)`` array per sequence."""
        return [self.predict_proba(s) for s in sequences]


class DirectEstimator(_TabularEstimator):
    """Per-state empirical label frequencies (the DCE optimum for a table)."""

    def _estimate(self, data):
        return estimate_direct(data)


class IndirectEstimator(_TabularEstimator):
    """Absorption probabilities of the empirical chain (the TC fixed point)."""

    def __init__(self, n_states=None, n_classes=None, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
        super().__init__(n_states=n_states, n_classes=n_classes)
        self.tol = tol
        self.max_iters = max_iters

    def _estimate(self, data):
        return estimate_indirect(data, self.tol, self.max_iters)
