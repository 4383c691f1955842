"""Tabular softmax classifiers trained with the TC-lambda loss family.

Each transient state ``m`` owns a row of logits ``theta[m]`` and predicts
``softmax(theta[m])``. Training is plain gradient descent on the
per-sequence averaged cross-entropy against stop-gradient soft targets.

Two target-refresh policies are supported:

``"per-step"``
    targets come from the parameters at the start of each minibatch step.
``"per-outer"``
    targets come from a reference copy that is frozen for whole passes
    over the data and refreshed afterwards, so that each block of epochs
    approximately solves one inner argmin of the outer TC iteration.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_lambda, check_sequences, check_states
from .exceptions import NonConvergenceError, TrainingDivergedError
from .losses import log_softmax, softmax
from .markov import DEFAULT_MAX_ITERS, DEFAULT_TOL, Dataset, make_rng, uniform_rows

logger = logging.getLogger(__name__)

REFRESH_POLICIES = ("per-step", "per-outer")
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for :func:`fit_gradient`.

    ``batch_size=None`` means full-batch. ``outer_iterations`` only matters
    with ``target_refresh="per-outer"``: the reference is refreshed every
    ``epochs // outer_iterations`` epochs (every epoch when None).
    ``reduction="mean"`` averages each sequence's loss over its prefixes;
    ``"sum"`` adds them, which is the objective whose tabular optimum is
    exactly the direct / indirect estimate when lengths vary.
    """

    lam: float = 1.0
    learning_rate: float = 0.5
    epochs: int = 100
    batch_size: int | None = None
    seed: int = 0
    outer_iterations: int | None = None
    target_refresh: str = "per-step"
    reduction: str = "mean"

    def __post_init__(self):
        check_lambda(self.lam)
        if not 0 < self.learning_rate < np.inf:
            raise ValueError("learning_rate must be positive and finite")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValueError("batch_size must be at least 1")
        if self.outer_iterations is not None and int(self.outer_iterations) < 1:
            raise ValueError("outer_iterations must be at least 1")
        if self.target_refresh not in REFRESH_POLICIES:
            raise ValueError(f"target_refresh must be one of {REFRESH_POLICIES}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class TabularClassifier:
    """Logit table ``theta`` of shape ``(M, K)``."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        if self.theta.ndim != 2:
            raise ValueError("theta must be a 2-D array")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @classmethod
    def zeros(cls, M: int, K: int) -> "TabularClassifier":
        return cls(np.zeros((M, K)))

    @property
    def M(self):
        return self.theta.shape[0]

    @property
    def K(self):
        return self.theta.shape[1]

    def predict_prefix(self, state: int) -> np.ndarray:
        return predict_prefix(self, state)

    def probability_table(self) -> np.ndarray:
        return softmax(self.theta, axis=1)


def predict_prefix(model: TabularClassifier, state: int) -> np.ndarray:
    """Class distribution predicted at 1-based ``state``."""
    if not 1 <= int(state) <= model.M:
        raise IndexError(f"state {state} outside [1..{model.M}]")
    return softmax(model.theta[int(state) - 1])


@dataclass(eq=False)
class TrainReport:
    loss_trace: list
    model: TabularClassifier
    kl_trace: list | None = None
    config: TrainConfig | None = field(default=None)


# --------------------------------------------------------------------------
# vectorized batch objective


class _Batch:
    """Flat position arrays for one minibatch, grouped by distance to the end."""

    # dense scatter matrices are used below this many entries
    DENSE_LIMIT = 1 << 20

    def __init__(self, data: Dataset, reduction: str):
        pos = data.positions()
        self.n = len(data)
        self.M, self.K = data.M, data.K
        self.state = pos["state"]
        self.next_state = pos["next_state"]
        self.is_last = pos["is_last"]
        n_pos = self.state.shape[0]
        lengths = data.lengths
        to_end = np.repeat(data.offsets[1:], lengths) - 1 - np.arange(n_pos)
        # a position at distance d from the end has its successor at index + 1
        self.groups = [np.flatnonzero(to_end == d) for d in range(1, int(lengths.max()))]
        self.hard = np.zeros((n_pos, self.K))
        self.hard[np.arange(n_pos), pos["label"]] = 1.0
        self.hard.setflags(write=False)
        if reduction == "mean":
            self.weight = 1.0 / np.repeat(lengths, lengths).astype(float)
        else:
            self.weight = np.ones(n_pos)
        self.scatter = None
        if self.M * n_pos <= self.DENSE_LIMIT:
            self.scatter = np.zeros((self.M, n_pos))
            self.scatter[self.state, np.arange(n_pos)] = self.weight

    def targets(self, ref_probs: np.ndarray, lam: float) -> np.ndarray:
        if lam == 1.0:
            return self.hard
        if lam == 0.0:
            Z = ref_probs[self.next_state]
            Z[self.is_last] = self.hard[self.is_last]
            return Z
        Z = self.hard.copy()
        for idx in self.groups:
            Z[idx] = lam * Z[idx + 1] + (1.0 - lam) * ref_probs[self.next_state[idx]]
        return Z

    def loss_and_grad(self, theta, Z, logp=None):
        """Summed per-sequence losses and their gradient in ``theta``."""
        if logp is None:
            logp = log_softmax(theta, axis=1)
        lp = logp[self.state]
        resid = np.exp(lp) - Z
        if self.scatter is not None:
            loss = -float(np.sum(self.scatter @ (Z * lp)))
            return loss, self.scatter @ resid
        w = self.weight[:, None]
        loss = -float(np.sum(w * Z * lp))
        resid *= w
        grad = np.empty((self.M, self.K))
        for k in range(self.K):
            grad[:, k] = np.bincount(self.state, weights=resid[:, k], minlength=self.M)
        return loss, grad


def _as_dataset(batch, M, K) -> Dataset:
    if isinstance(batch, Dataset):
        return batch
    return Dataset.from_trajectories(batch, M, K)


def train_step(
    model: TabularClassifier,
    batch,
    cfg: TrainConfig,
    reference: TabularClassifier | None = None,
) -> TabularClassifier:
    """One gradient step of the TC-lambda objective on ``batch``.

    Targets are computed from ``reference`` (the current ``model`` when
    None) and held fixed; the update is
    ``theta - lr / |B| * grad(sum of per-sequence losses)``.
    """
    data = _as_dataset(batch, model.M, model.K)
    ref = model if reference is None else reference
    b = _Batch(data, cfg.reduction)
    Z = b.targets(softmax(ref.theta, axis=1), cfg.lam)
    _, grad = b.loss_and_grad(model.theta, Z)
    return TabularClassifier(model.theta - cfg.learning_rate / b.n * grad)


def _successive_kl(theta, data: Dataset) -> float:
    pos = data.positions()
    has_next = ~pos["is_last"]
    if not has_next.any():
        return 0.0
    logp = log_softmax(theta, axis=1)
    a = pos["next_state"][has_next]  # later prefix
    b = pos["state"][has_next]
    kl = np.sum(np.exp(logp[a]) * (logp[a] - logp[b]), axis=1)
    return float(np.mean(np.maximum(kl, 0.0)))


def fit_gradient(
    data: Dataset,
    cfg: TrainConfig,
    init: TabularClassifier | None = None,
    eval_data: Dataset | None = None,
) -> TrainReport:
    """Train a tabular classifier from zero logits by minibatch gradient descent.

    The loss trace records, per epoch, the mean per-sequence loss seen by
    the updates of that epoch. With ``eval_data`` the mean successive-KL of
    the model's predictions on it is recorded after every epoch.
    """
    theta = np.zeros((data.M, data.K)) if init is None else init.theta.copy()
    N = len(data)
    bs = N if cfg.batch_size is None else min(int(cfg.batch_size), N)
    rng = make_rng(cfg.seed)
    refresh_every = 1
    if cfg.target_refresh == "per-outer" and cfg.outer_iterations is not None:
        refresh_every = max(1, int(cfg.epochs) // int(cfg.outer_iterations))

    full = _Batch(data, cfg.reduction) if bs == N else None
    ref_probs = softmax(theta, axis=1)
    losses, kls = [], [] if eval_data is not None else None
    for epoch in range(int(cfg.epochs)):
        if cfg.target_refresh == "per-outer" and epoch % refresh_every == 0:
            ref_probs = softmax(theta, axis=1)
        if full is not None:
            batches = [full]
        else:
            perm = rng.permutation(N)
            batches = [_Batch(data.subset(perm[i : i + bs]), cfg.reduction) for i in range(0, N, bs)]
        total = 0.0
        for b in batches:
            logp = log_softmax(theta, axis=1)
            if cfg.target_refresh == "per-step":
                ref_probs = np.exp(logp)
            Z = b.targets(ref_probs, cfg.lam)
            loss, grad = b.loss_and_grad(theta, Z, logp)
            total += loss
            theta = theta - cfg.learning_rate / b.n * grad
        mean_loss = total / N
        if not np.isfinite(mean_loss) or not np.all(np.isfinite(theta)):
            raise TrainingDivergedError(epoch + 1, cfg.learning_rate, mean_loss)
        losses.append(mean_loss)
        if kls is not None:
            kls.append(_successive_kl(theta, eval_data))
    logger.debug("trained %d epochs, final loss %.6g", cfg.epochs, losses[-1])
    return TrainReport(losses, TabularClassifier(theta), kls, cfg)


def fit_tabular_tc(
    data: Dataset, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS
) -> np.ndarray:
    """Exact outer TC iteration on a probability table.

    Each round replaces every visited row with the minimizer of its summed
    cross-entropies against the current targets, i.e. the average of the
    targets of all transitions leaving that state (the next state's row, or
    the one-hot label at the end). Unvisited rows stay uniform.
    """
    pos = data.positions()
    M, K = data.M, data.K
    state, nxt, last, label = pos["state"], pos["next_state"], pos["is_last"], pos["label"]
    counts = np.bincount(state, minlength=M).astype(float)
    seen = counts > 0
    hard = np.zeros((M, K))
    np.add.at(hard, (state[last], label[last]), 1.0)
    src, dst = state[~last], nxt[~last]

    theta = uniform_rows(M, K)
    residual = np.inf
    for _ in range(max_iters):
        acc = hard.copy()
        np.add.at(acc, src, theta[dst])
        new = theta.copy()
        new[seen] = acc[seen] / counts[seen, None]
        residual = float(np.max(np.abs(new - theta)))
        theta = new
        if residual <= tol:
            return theta
    raise NonConvergenceError(theta, residual, max_iters)


class TCLambdaClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_gradient`.

    ``fit`` takes 1-based state sequences and 1-based labels (or a
    :class:`Dataset`); ``predict_proba`` and ``predict`` take 1-based
    state indices, which is all a tabular model conditions on.
    """

    def __init__(
        self,
        lam=0.5,
        learning_rate=0.5,
        epochs=100,
        batch_size=None,
        seed=0,
        target_refresh="per-step",
        outer_iterations=None,
        reduction="mean",
        n_states=None,
        n_classes=None,
    ):
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.target_refresh = target_refresh
        self.outer_iterations = outer_iterations
        self.reduction = reduction
        self.n_states = n_states
        self.n_classes = n_classes

    def _config(self):
        return TrainConfig(
            lam=self.lam,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            outer_iterations=self.outer_iterations,
            target_refresh=self.target_refresh,
            reduction=self.reduction,
        )

    def fit(self, X, y=None):
        data = check_sequences(X, y, self.n_states, self.n_classes)
        report = fit_gradient(data, self._config())
        self.model_ = report.model
        self.theta_ = report.model.theta
        self.loss_trace_ = report.loss_trace
        self.n_states_, self.n_classes_ = data.M, data.K
        self.classes_ = np.arange(1, data.K + 1)
        return self

    def predict_proba(self, states):
        check_is_fitted(self, "theta_")
        return softmax(self.theta_[check_states(states, self.n_states_)], axis=1)

    def predict(self, states):
        return self.classes_[np.argmax(self.predict_proba(states), axis=1)]

    def predict_sequence_proba(self, sequences):
        return [self.predict_proba(s) for s in sequences]
