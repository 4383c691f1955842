"""Absorbing Markov chains: validation, exact absorption solvers, sampling.

A chain on ``M`` transient states and ``K`` absorbing states is the pair
``(Q, R)``: ``Q[m, m']`` is the probability of moving between transient
states and ``R[m, k]`` the probability of being absorbed in class ``k``.
The absorption probability matrix ``P*`` solves ``P = Q P + R``.

State and class indices are 1-based wherever they cross the public API
(trajectories, files, CLI); arrays are indexed from 0 internally.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import (
    ChainStructureError,
    DatasetError,
    InvalidChainError,
    NonConvergenceError,
    SolverError,
    TrajectoryCapError,
)

ROW_SUM_TOL = 1e-12
PROB_ROW_TOL = 1e-9
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000
DEFAULT_STEP_CAP = 1_000_000


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used by every stochastic routine.

    PCG64 with a 64-bit seed: portable across platforms and numpy versions
    that honour the ``Generator`` stream-compatibility policy.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Absorbing chain ``(Q, R)`` with a distribution over starting states.

    ``initial`` defaults to uniform over the ``M`` transient states.
    Construction only checks shapes; call :func:`validate_chain` for the
    probabilistic invariants.
    """

    Q: np.ndarray
    R: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        R = np.array(self.R, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ChainStructureError(f"Q must be square, got shape {Q.shape}")
        M = Q.shape[0]
        if M == 0:
            raise ChainStructureError("chain needs at least one transient state")
        if R.ndim != 2 or R.shape[0] != M or R.shape[1] == 0:
            raise ChainStructureError(
                f"R must have shape ({M}, K) with K >= 1, got {R.shape}"
            )
        if self.initial is None:
            initial = np.full(M, 1.0 / M)
        else:
            initial = np.array(self.initial, dtype=float)
        if initial.shape != (M,):
            raise ChainStructureError(
                f"initial must have length {M}, got shape {initial.shape}"
            )
        for arr in (Q, R, initial):
            arr.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "initial", initial)

    @property
    def M(self) -> int:
        return self.Q.shape[0]

    @property
    def K(self) -> int:
        return self.R.shape[1]

    def transition_rows(self) -> np.ndarray:
        """Rows of ``[Q | R]`` renormalized to sum to exactly one."""
        U = np.hstack([self.Q, self.R])
        return U / U.sum(axis=1, keepdims=True)

    def normalized(self) -> "MarkovChain":
        U = self.transition_rows()
        return MarkovChain(U[:, : self.M], U[:, self.M :], self.initial / self.initial.sum())


@dataclass(frozen=True)
class Violation:
    kind: str  # "range" | "row_sum" | "initial_sum" | "reachability"
    location: str
    message: str

    def __str__(self):
        return f"{self.kind} at {self.location}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _exit_distances(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Fewest Q-steps from each state to one with a nonzero R row (-1 if none).

    Breadth-first search backwards over the nonzero pattern of ``Q``.
    """
    M = Q.shape[0]
    dist = np.full(M, -1, dtype=int)
    queue = deque()
    for m in np.flatnonzero((R > 0).any(axis=1)):
        dist[m] = 0
        queue.append(m)
    preds = [np.flatnonzero(Q[:, j] > 0) for j in range(M)]
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if dist[i] < 0:
                dist[i] = dist[j] + 1
                queue.append(i)
    return dist


def validate_chain(chain: MarkovChain) -> ValidationReport:
    """Check every probabilistic invariant of ``chain``.

    Returns a report listing each violated invariant with the 1-based row
    or entry it concerns. Shape problems never get this far: they raise
    :class:`ChainStructureError` when the chain is built.
    """
    Q, R, initial = chain.Q, chain.R, chain.initial
    out: list[Violation] = []
    for name, arr in (("Q", Q), ("R", R), ("initial", initial)):
        bad = ~np.isfinite(arr) | (arr < 0) | (arr > 1)
        for idx in zip(*np.nonzero(bad)):
            loc = f"{name}[{','.join(str(i + 1) for i in idx)}]"
            out.append(Violation("range", loc, f"entry {arr[idx]!r} not in [0, 1]"))
    sums = Q.sum(axis=1) + R.sum(axis=1)
    for m in np.flatnonzero(~(np.abs(sums - 1.0) <= ROW_SUM_TOL)):
        out.append(
            Violation("row_sum", f"row {m + 1}", f"Q and R sum to {sums[m]!r}, not 1")
        )
    total = initial.sum()
    if not abs(total - 1.0) <= ROW_SUM_TOL:
        out.append(Violation("initial_sum", "initial", f"sums to {total!r}, not 1"))
    dist = _exit_distances(Q, R)
    for m in np.flatnonzero(dist < 0):
        out.append(
            Violation("reachability", f"state {m + 1}", "no absorbing state is reachable")
        )
    return ValidationReport(tuple(out))


def check_chain(chain: MarkovChain) -> MarkovChain:
    """Validate and return the row-renormalized chain; raise if invalid."""
    report = validate_chain(chain)
    if not report.ok:
        raise InvalidChainError(report.violations)
    return chain.normalized()


def absorption_horizon(chain: MarkovChain) -> int:
    """Largest number of transient steps any state needs before it can absorb."""
    dist = _exit_distances(chain.Q, chain.R)
    if (dist < 0).any():
        raise InvalidChainError(validate_chain(chain).violations)
    return int(dist.max())


def uniform_rows(M: int, K: int) -> np.ndarray:
    return np.full((M, K), 1.0 / K)


def is_row_stochastic(P, tol: float = PROB_ROW_TOL) -> bool:
    P = np.asarray(P, dtype=float)
    return bool(
        P.ndim == 2
        and np.all(np.isfinite(P))
        and np.all(P >= -tol)
        and np.all(np.abs(P.sum(axis=1) - 1.0) <= tol)
    )


def iterate_fixed_point(Q, R, P0, tol, max_iters, history=None):
    """Run ``P <- Q P + R`` from ``P0`` until the max-abs change is ``<= tol``.

    Returns ``(P, n_iter)`` where ``n_iter`` counts the updates that moved
    the iterate by more than ``tol``; the final confirming sweep is not
    counted, so a start that is already the fixed point reports 0.
    No validation is done here.
    """
    P = np.array(P0, dtype=float)
    residual = np.inf
    for i in range(1, max_iters + 1):
        P_next = Q @ P + R
        residual = float(np.max(np.abs(P_next - P)))
        P = P_next
        if history is not None:
            history.append(residual)
        if residual <= tol:
            return P, i - 1
    raise NonConvergenceError(P, residual, max_iters)


def solve_absorption_fixed_point(
    chain: MarkovChain,
    P0=None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    history: list | None = None,
) -> tuple[np.ndarray, int]:
    """Absorption probabilities by fixed-point iteration.

    Parameters
    ----------
    chain : MarkovChain
        Must pass :func:`validate_chain`.
    P0 : array of shape (M, K), optional
        Row-stochastic starting guess; uniform rows by default. Any
        row-stochastic start converges to the same matrix.
    tol : float
        Stop once successive iterates differ by at most ``tol`` (max-abs).
    max_iters : int
        Raise :class:`NonConvergenceError` past this many sweeps.
    history : list, optional
        If given, the residual of every sweep is appended to it.

    Returns
    -------
    P : ndarray of shape (M, K)
    n_iter : int
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    ch = check_chain(chain)
    if P0 is None:
        P0 = uniform_rows(ch.M, ch.K)
    else:
        P0 = np.asarray(P0, dtype=float)
        if P0.shape != (ch.M, ch.K):
            raise ChainStructureError(f"P0 must have shape {(ch.M, ch.K)}, got {P0.shape}")
        if not is_row_stochastic(P0):
            raise ValueError("P0 must be row-stochastic")
    return iterate_fixed_point(ch.Q, ch.R, P0, tol, max_iters, history)


def solve_absorption_closed_form(chain: MarkovChain) -> np.ndarray:
    """Absorption probabilities as ``(I - Q)^{-1} R`` via a dense solve."""
    ch = check_chain(chain)
    A = np.eye(ch.M) - ch.Q
    try:
        P = np.linalg.solve(A, ch.R)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"I - Q is singular: {exc}") from exc
    if not np.all(np.isfinite(P)):
        raise SolverError("I - Q is numerically singular")
    return P


# --------------------------------------------------------------------------
# trajectories and datasets


@dataclass(frozen=True)
class Trajectory:
    """Transient states visited (1-based) and the absorbing label (1-based)."""

    states: tuple[int, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "label", int(self.label))
        if not self.states:
            raise DatasetError("a trajectory needs at least one transient state")

    def __len__(self):
        return len(self.states)


@dataclass(eq=False)
class Dataset:
    """Labelled trajectories stored as flat 0-based arrays.

    ``states[offsets[n]:offsets[n + 1]]`` are the transient states of
    trajectory ``n`` and ``labels[n]`` its class. Iterating yields
    1-based :class:`Trajectory` objects.
    """

    states: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    M: int
    K: int
    _positions: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.intp)
        self.offsets = np.asarray(self.offsets, dtype=np.intp)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.M = int(self.M)
        self.K = int(self.K)
        n = self.labels.shape[0]
        if n == 0:
            raise DatasetError("dataset is empty")
        if self.offsets.shape != (n + 1,) or self.offsets[0] != 0:
            raise DatasetError("offsets must start at 0 and have one entry per trajectory plus one")
        if self.offsets[-1] != self.states.shape[0] or np.any(np.diff(self.offsets) < 1):
            raise DatasetError("every trajectory needs at least one state")
        if self.states.min() < 0 or self.states.max() >= self.M:
            raise DatasetError(f"state index outside [1..{self.M}]")
        if self.labels.min() < 0 or self.labels.max() >= self.K:
            raise DatasetError(f"label outside [1..{self.K}]")
        for arr in (self.states, self.offsets, self.labels):
            arr.setflags(write=False)

    @classmethod
    def from_trajectories(cls, trajectories: Iterable, M: int, K: int) -> "Dataset":
        """Build from 1-based ``Trajectory`` objects or ``(states, label)`` pairs."""
        states, offsets, labels = [], [0], []
        for traj in trajectories:
            if not isinstance(traj, Trajectory):
                traj = Trajectory(*traj)
            states.extend(traj.states)
            offsets.append(len(states))
            labels.append(traj.label)
        if not labels:
            raise DatasetError("dataset is empty")
        return cls(np.array(states) - 1, np.array(offsets), np.array(labels) - 1, M, K)

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, n) -> Trajectory:
        a, b = self.offsets[n], self.offsets[n + 1]
        return Trajectory(tuple(self.states[a:b] + 1), self.labels[n] + 1)

    def __iter__(self) -> Iterator[Trajectory]:
        for n in range(len(self)):
            yield self[n]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        lengths = self.lengths[idx]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        parts = [self.states[self.offsets[i] : self.offsets[i + 1]] for i in idx]
        return Dataset(np.concatenate(parts), offsets, self.labels[idx], self.M, self.K)

    def positions(self) -> dict:
        """Flat per-position arrays, cached.

        ``state``, ``traj`` (owning trajectory), ``is_last``, ``next_state``
        (-1 at the last position) and ``label`` (of the owning trajectory).
        """
        if self._positions is None:
            traj = np.repeat(np.arange(len(self)), self.lengths)
            is_last = np.zeros(self.states.shape[0], dtype=bool)
            is_last[self.offsets[1:] - 1] = True
            nxt = np.full(self.states.shape[0], -1, dtype=np.intp)
            nxt[:-1] = self.states[1:]
            nxt[is_last] = -1
            self._positions = {
                "state": self.states,
                "traj": traj,
                "is_last": is_last,
                "next_state": nxt,
                "label": self.labels[traj],
            }
        return self._positions

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.M == other.M
            and self.K == other.K
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.labels, other.labels)
        )


def _cdf_table(rows: np.ndarray) -> np.ndarray:
    """Cumulative sums with the tail pinned to exactly 1.

    Entries from the last nonzero probability onwards are set to 1.0 so a
    uniform draw in [0, 1) always lands on a positive-probability outcome.
    """
    rows = np.atleast_2d(rows)
    cum = np.cumsum(rows, axis=1)
    for r in range(rows.shape[0]):
        nz = np.flatnonzero(rows[r] > 0)
        cum[r, nz[-1] :] = 1.0
    return cum


def sample_trajectories(
    chain: MarkovChain, n: int, seed: int, max_steps: int = DEFAULT_STEP_CAP
) -> Dataset:
    """Draw ``n`` labelled trajectories from ``chain``.

    The first state is drawn from ``chain.initial``; each following move is
    drawn from the row ``[Q[m] | R[m]]`` by inverse-CDF with a strict
    comparison, and a trajectory stops at its first absorbing move. All
    ``n`` trajectories advance together, so the output depends only on
    ``seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    ch = check_chain(chain)
    M = ch.M
    rng = make_rng(seed)
    step_cdf = _cdf_table(ch.transition_rows())
    init_cdf = _cdf_table(ch.initial)[0]

    cur = np.searchsorted(init_cdf, rng.random(n), side="right")
    active = np.arange(n)
    labels = np.empty(n, dtype=np.intp)
    seen_idx, seen_state = [], []
    steps = 0
    while active.size:
        if steps >= max_steps:
            raise TrajectoryCapError(
                f"{active.size} trajectories still transient after {max_steps} steps"
            )
        seen_idx.append(active)
        seen_state.append(cur)
        u = rng.random(active.size)
        nxt = (u[:, None] >= step_cdf[cur]).sum(axis=1)
        done = nxt >= M
        labels[active[done]] = nxt[done] - M
        active = active[~done]
        cur = nxt[~done]
        steps += 1

    idx = np.concatenate(seen_idx)
    st = np.concatenate(seen_state)
    order = np.argsort(idx, kind="stable")
    lengths = np.bincount(idx, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    return Dataset(st[order], offsets, labels, M, ch.K)
