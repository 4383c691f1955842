"""Readers and writers for chain, dataset, estimate, model and CSV files.

All floats are written with 17 significant digits so files round-trip
exactly and are byte-stable across runs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import ChainStructureError, DatasetError
from .markov import Dataset, MarkovChain, Trajectory
from .trainer import TabularClassifier


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.16e}"


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# chain files -------------------------------------------------------------


def chain_to_dict(chain: MarkovChain) -> dict:
    return {
        "M": chain.M,
        "K": chain.K,
        "Q": chain.Q.tolist(),
        "R": chain.R.tolist(),
        "initial": chain.initial.tolist(),
    }


def chain_from_dict(doc: dict) -> MarkovChain:
    for key in ("M", "K", "Q", "R"):
        if key not in doc:
            raise ChainStructureError(f"chain document is missing {key!r}")
    chain = MarkovChain(doc["Q"], doc["R"], doc.get("initial"))
    if chain.M != doc["M"] or chain.K != doc["K"]:
        raise ChainStructureError(
            f"declared M={doc['M']}, K={doc['K']} but matrices are {chain.M}x{chain.K}"
        )
    return chain


def load_chain(path) -> MarkovChain:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChainStructureError(f"{path}: not valid JSON ({exc})") from exc
    return chain_from_dict(doc)


def save_chain(chain: MarkovChain, path) -> None:
    dump_json(chain_to_dict(chain), path)


# dataset files -------------------------------------------------------------


def format_dataset(data: Dataset) -> str:
    lines = [f"{t.label},{' '.join(map(str, t.states))}" for t in data]
    return "\n".join(lines) + "\n"


def write_dataset(data: Dataset, path) -> None:
    Path(path).write_text(format_dataset(data))


def parse_dataset(text: str, M: int | None = None, K: int | None = None) -> Dataset:
    """Parse ``label,s_1 s_2 ... s_T`` lines (1-based); blank lines are skipped."""
    trajs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            label, states = line.split(",", 1)
            traj = Trajectory(tuple(int(s) for s in states.split()), int(label))
        except (ValueError, DatasetError) as exc:
            raise DatasetError(f"line {lineno}: cannot parse {line!r} ({exc})") from exc
        if min(traj.states) < 1 or traj.label < 1:
            raise DatasetError(f"line {lineno}: indices are 1-based")
        trajs.append(traj)
    if not trajs:
        raise DatasetError("dataset file has no records")
    M = M or max(max(t.states) for t in trajs)
    K = K or max(t.label for t in trajs)
    return Dataset.from_trajectories(trajs, M, K)


def read_dataset(path, M: int | None = None, K: int | None = None) -> Dataset:
    return parse_dataset(Path(path).read_text(), M, K)


# estimates, solutions, models ---------------------------------------------


def write_probability_csv(P, path) -> None:
    P = np.asarray(P)
    header = ["state"] + [f"p_{k + 1}" for k in range(P.shape[1])]
    write_csv(path, header, ([m + 1, *row] for m, row in enumerate(P)))


def write_estimate_csv(report, path) -> None:
    P = report.estimate
    header = ["state", "support"] + [f"p_{k + 1}" for k in range(P.shape[1])] + ["fallback_flag"]
    rows = (
        [m + 1, int(report.per_state_support[m]), *P[m], bool(report.fallback[m])]
        for m in range(P.shape[0])
    )
    write_csv(path, header, rows)


def write_train_report_csv(report, path) -> None:
    header = ["epoch", "mean_loss"]
    if report.kl_trace is not None:
        header.append("mean_successive_kl")
        rows = ([e + 1, l, k] for e, (l, k) in enumerate(zip(report.loss_trace, report.kl_trace)))
    else:
        rows = ([e + 1, l] for e, l in enumerate(report.loss_trace))
    write_csv(path, header, rows)


def save_model(model: TabularClassifier, path) -> None:
    dump_json({"M": model.M, "K": model.K, "theta": model.theta.tolist()}, path)


def load_model(path) -> TabularClassifier:
    with open(path) as fh:
        doc = json.load(fh)
    model = TabularClassifier(doc["theta"])
    if model.theta.shape != (doc["M"], doc["K"]):
        raise ValueError("theta shape disagrees with declared M, K")
    return model
