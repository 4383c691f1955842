"""Replicated synthetic studies on absorbing chains.

Every study derives the seed of run ``r`` as ``seed + r`` (the lambda sweep
uses ``seed + 2r`` for training data and ``seed + 2r + 1`` for held-out
data), so results do not depend on how runs are scheduled. Confidence
intervals are normal approximations, ``mean +/- 1.96 * SE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .estimation import estimate_direct, estimate_indirect
from .markov import MarkovChain, sample_trajectories, solve_absorption_closed_form
from .metrics import (
    UndefinedMetricError,
    accuracy,
    mean_nll,
    mean_successive_kl,
    records_from_model,
    roc_auc_ovr_macro,
)
from .trainer import TrainConfig, fit_gradient

Z95 = 1.959963984540054


@dataclass(frozen=True)
class LayeredChainSpec:
    W: int
    T: int

    def __post_init__(self):
        if int(self.W) < 1 or int(self.T) < 1:
            raise ValueError("W and T must be at least 1")


def build_layered_chain(spec: LayeredChainSpec) -> MarkovChain:
    """``T`` layers of ``W`` states, two absorbing classes.

    States are numbered layer by layer: 1-based state ``(t - 1) * W + w``
    is the ``w``-th state of layer ``t``. Each state moves uniformly to the
    next layer; the last layer absorbs in class 1 or 2 with probability 1/2.
    Trajectories start uniformly on layer 1.
    """
    W, T = int(spec.W), int(spec.T)
    M = W * T
    Q = np.zeros((M, M))
    for t in range(T - 1):
        Q[t * W : (t + 1) * W, (t + 1) * W : (t + 2) * W] = 1.0 / W
    R = np.zeros((M, 2))
    R[(T - 1) * W :, :] = 0.5
    initial = np.zeros(M)
    initial[:W] = 1.0 / W
    return MarkovChain(Q, R, initial)


def mean_ci(values) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    m = float(np.mean(v))
    if v.size < 2:
        return m, math.nan, math.nan
    half = Z95 * float(np.std(v, ddof=1)) / math.sqrt(v.size)
    return m, m - half, m + half


def ratio_ci(num, den) -> tuple[float, float, float]:
    """Ratio of means with a delta-method interval on paired run values."""
    a = np.asarray(num, dtype=float)
    b = np.asarray(den, dtype=float)
    ma, mb = float(a.mean()), float(b.mean())
    r = ma / mb
    n = a.size
    cov = np.cov(np.vstack([a, b]), ddof=1)
    var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / (n * mb * mb)
    half = Z95 * math.sqrt(max(var, 0.0))
    return r, r - half, r + half


@dataclass
class ExperimentReport:
    """Per-condition summaries plus the raw per-run values.

    Each row maps the condition columns and ``metric`` to ``mean``,
    ``ci_lo``, ``ci_hi``, ``median`` and ``runs``.
    """

    name: str
    condition_columns: list
    rows: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def add(self, condition: dict, metric: str, values, summary=None):
        values = [float(v) for v in values]
        mean, lo, hi = summary if summary is not None else mean_ci(values)
        self.rows.append(
            {
                **condition,
                "metric": metric,
                "mean": mean,
                "ci_lo": lo,
                "ci_hi": hi,
                "median": float(np.median(values)),
                "runs": len(values),
            }
        )
        key = tuple(condition[c] for c in self.condition_columns) + (metric,)
        self.raw[key] = values

    def get(self, metric: str, **condition) -> dict:
        for row in self.rows:
            if row["metric"] == metric and all(row[k] == v for k, v in condition.items()):
                return row
        raise KeyError((metric, condition))

    def values(self, metric: str, **condition) -> list:
        key = tuple(condition[c] for c in self.condition_columns) + (metric,)
        return self.raw[key]

    @property
    def header(self):
        return [*self.condition_columns, "metric", "mean", "ci_lo", "ci_hi", "median", "runs"]

    def table(self):
        return [[row[c] for c in self.header] for row in self.rows]


def _run_parallel(fn, args, n_jobs):
    if n_jobs == 1:
        return [fn(*a) for a in args]
    return Parallel(n_jobs=n_jobs)(delayed(fn)(*a) for a in args)


def _mse_run(chain, N, seed, state):
    data = sample_trajectories(chain, N, seed)
    d = estimate_direct(data).estimate[state - 1, 0]
    i = estimate_indirect(data).estimate[state - 1, 0]
    return (d - 0.5) ** 2, (i - 0.5) ** 2


def run_mse_ratio_study(
    W_values=(1, 2, 4, 8, 16),
    T: int = 2,
    runs: int = 1000,
    seed: int = 0,
    samples_per_W: int = 20,
    state: int = 1,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Squared error of both estimators at a first-layer state of the layered chain.

    For each ``W`` every run samples ``N = samples_per_W * W`` trajectories
    and records ``(p_hat[state, 1] - 1/2)^2`` for the direct and the
    indirect estimate. Reports both MSEs and the ratio indirect / direct.
    """
    if runs < 2:
        raise ValueError("runs must be at least 2")
    if not 1 <= state <= min(W_values):
        raise ValueError("state must lie in the first layer for every W")
    report = ExperimentReport(
        "mse-ratio",
        ["W", "N"],
        config={
            "W_values": [int(w) for w in W_values],
            "T": int(T),
            "runs": int(runs),
            "seed": int(seed),
            "samples_per_W": int(samples_per_W),
            "state": int(state),
        },
    )
    for W in W_values:
        chain = build_layered_chain(LayeredChainSpec(W, T))
        N = samples_per_W * W
        out = _run_parallel(_mse_run, [(chain, N, seed + r, state) for r in range(runs)], n_jobs)
        se_dir = [o[0] for o in out]
        se_ind = [o[1] for o in out]
        cond = {"W": int(W), "N": int(N)}
        report.add(cond, "mse_direct", se_dir)
        report.add(cond, "mse_indirect", se_ind)
        ratio = np.divide(se_ind, np.where(np.asarray(se_dir) > 0, se_dir, np.nan))
        report.add(cond, "mse_ratio", np.nan_to_num(ratio, nan=1.0), summary=ratio_ci(se_ind, se_dir))
    return report


def _consistency_run(chain, P_star, N, seed, probe):
    data = sample_trajectories(chain, N, seed)
    d = estimate_direct(data).estimate
    i = estimate_indirect(data).estimate
    ed = float(np.max(np.abs(d - P_star)))
    ei = float(np.max(np.abs(i - P_star)))
    pd = float(np.max(np.abs(d[probe - 1] - P_star[probe - 1])))
    pi = float(np.max(np.abs(i[probe - 1] - P_star[probe - 1])))
    return ed, ei, float(pi <= pd)


def run_consistency_study(
    chain: MarkovChain,
    N_values=(100, 1000, 10_000, 100_000),
    runs: int = 20,
    seed: int = 0,
    probe_state: int = 1,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Max-abs error of both estimators against ``P*`` as ``N`` grows.

    Also records, per run, whether the indirect estimate is at least as
    close as the direct one at ``probe_state``.
    """
    P_star = solve_absorption_closed_form(chain)
    report = ExperimentReport(
        "consistency",
        ["N"],
        config={"N_values": [int(n) for n in N_values], "runs": int(runs), "seed": int(seed),
                "probe_state": int(probe_state)},
    )
    for N in N_values:
        out = _run_parallel(
            _consistency_run, [(chain, P_star, int(N), seed + r, probe_state) for r in range(runs)], n_jobs
        )
        cond = {"N": int(N)}
        report.add(cond, "max_err_direct", [o[0] for o in out])
        report.add(cond, "max_err_indirect", [o[1] for o in out])
        report.add(cond, "indirect_le_direct_at_probe", [o[2] for o in out])
    return report


def _sweep_run(chain, P_star, N, n_eval, lam, cfg, train_seed, eval_seed):
    train = sample_trajectories(chain, N, train_seed)
    held_out = sample_trajectories(chain, n_eval, eval_seed)
    rep = fit_gradient(train, replace(cfg, lam=lam, seed=train_seed))
    table = rep.model.probability_table()
    records = records_from_model(table, held_out)
    try:
        auc = roc_auc_ovr_macro(records)
    except UndefinedMetricError:
        auc = math.nan
    return {
        "max_err": float(np.max(np.abs(table - P_star))),
        "dist_to_direct": float(np.max(np.abs(table - estimate_direct(train).estimate))),
        "dist_to_indirect": float(np.max(np.abs(table - estimate_indirect(train).estimate))),
        "accuracy": accuracy(records),
        "nll": mean_nll(records),
        "roc_auc": auc,
        "mean_kl": mean_successive_kl(records),
        "final_loss": rep.loss_trace[-1],
    }


SWEEP_METRICS = ("max_err", "dist_to_direct", "dist_to_indirect", "accuracy", "nll",
                 "roc_auc", "mean_kl", "final_loss")


def run_lambda_sweep(
    chain: MarkovChain,
    N: int,
    lambda_values=(0.0, 0.5, 1.0),
    cfg: TrainConfig | None = None,
    runs: int = 10,
    seed: int = 0,
    n_eval: int | None = None,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Train one tabular model per (lambda, run) and evaluate it.

    Every lambda sees the same training and held-out samples for a given
    run. Metrics on held-out data use full sequences; ``mean_kl`` is the
    average successive-prediction KL along held-out trajectories.
    """
    cfg = cfg or TrainConfig()
    n_eval = n_eval or N
    P_star = solve_absorption_closed_form(chain)
    report = ExperimentReport(
        "lambda-sweep",
        ["lambda", "N"],
        config={"N": int(N), "lambda_values": [float(l) for l in lambda_values], "runs": int(runs),
                "seed": int(seed), "n_eval": int(n_eval), "train": cfg.to_dict()},
    )
    for lam in lambda_values:
        args = [(chain, P_star, N, n_eval, float(lam), cfg, seed + 2 * r, seed + 2 * r + 1)
                for r in range(runs)]
        out = _run_parallel(_sweep_run, args, n_jobs)
        cond = {"lambda": float(lam), "N": int(N)}
        for metric in SWEEP_METRICS:
            report.add(cond, metric, [o[metric] for o in out])
    return report
