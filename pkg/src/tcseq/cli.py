"""Command-line entry point.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
``TCSEQ_OUTPUT_DIR`` sets the default output directory of ``train`` and
``study``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path


from . import __version__
from . import io as tio
from ._validation import check_lambda, lookahead_to_lambda
from .estimation import estimate_direct, estimate_indirect
from .exceptions import (
    ChainStructureError,
    DatasetError,
    InvalidChainError,
    NonConvergenceError,
    SolverError,
    TrainingDivergedError,
    TrajectoryCapError,
)
from .experiments import (
    LayeredChainSpec,
    build_layered_chain,
    run_consistency_study,
    run_lambda_sweep,
    run_mse_ratio_study,
)
from .markov import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    check_chain,
    sample_trajectories,
    solve_absorption_closed_form,
    solve_absorption_fixed_point,
)
from .metrics import metric_table, records_from_model
from .trainer import TrainConfig, fit_gradient

log = logging.getLogger("tcseq")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
OUTPUT_DIR_ENV = "TCSEQ_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _load_valid_chain(path):
    chain = tio.load_chain(path)
    check_chain(chain)
    return chain


def _default_out_dir(arg):
    if arg:
        return Path(arg)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    raise UsageError(f"no output directory given and {OUTPUT_DIR_ENV} is unset")


def cmd_solve(args):
    chain = _load_valid_chain(args.chain)
    if args.method == "closed-form":
        P = solve_absorption_closed_form(chain)
    else:
        P, n_iter = solve_absorption_fixed_point(chain, tol=args.tol, max_iters=args.max_iters)
        log.info("converged after %d iterations", n_iter)
    tio.write_probability_csv(P, args.out)
    return EXIT_OK


def cmd_sample(args):
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    chain = _load_valid_chain(args.chain)
    data = sample_trajectories(chain, args.n, args.seed)
    tio.write_dataset(data, args.out)
    return EXIT_OK


def _read_data(args):
    return tio.read_dataset(args.data, args.states, args.classes)


def cmd_estimate(args):
    data = _read_data(args)
    if args.method == "direct":
        report = estimate_direct(data)
    else:
        report = estimate_indirect(data, args.tol, args.max_iters)
    tio.write_estimate_csv(report, args.out)
    return EXIT_OK


def cmd_train(args):
    if args.lookahead is not None:
        lam = lookahead_to_lambda(args.lookahead)
    else:
        lam = args.lam
    try:
        check_lambda(lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out_dir = _default_out_dir(args.out_dir)
    data = _read_data(args)
    eval_data = tio.read_dataset(args.eval, data.M, data.K) if args.eval else None
    try:
        cfg = TrainConfig(
            lam=lam,
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            outer_iterations=args.outer_iterations,
            target_refresh=args.refresh,
            reduction=args.reduction,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = fit_gradient(data, cfg, eval_data=eval_data)
    out_dir.mkdir(parents=True, exist_ok=True)
    tio.write_train_report_csv(report, out_dir / "train_report.csv")
    tio.save_model(report.model, out_dir / "model.json")
    manifest = {
        "command": "train",
        "version": __version__,
        "data": str(Path(args.data).resolve()),
        "eval": str(Path(args.eval).resolve()) if args.eval else None,
        "M": data.M,
        "K": data.K,
        "config": cfg.to_dict(),
    }
    tio.dump_json(manifest, out_dir / "manifest.json")
    return EXIT_OK


def cmd_evaluate(args):
    model = tio.load_model(args.model)
    data = tio.read_dataset(args.data, model.M, model.K)
    prefix_lens = [None if p == "full" else int(p) for p in args.prefix_lens]
    rows = metric_table(records_from_model(model.probability_table(), data), prefix_lens)
    header = ["prefix_len", "accuracy", "nll", "roc_auc", "mean_kl"]
    tio.write_csv(args.out, header, ([r[h] for h in header] for r in rows))
    return EXIT_OK


# studies -------------------------------------------------------------------

DEFAULT_TRAIN = {
    "learning_rate": 0.5,
    "epochs": 3000,
    "batch_size": None,
    "target_refresh": "per-step",
    "outer_iterations": None,
    "reduction": "mean",
}

STUDIES = {
    "mse-ratio": {
        "required": ("W_values", "runs", "seed"),
        "defaults": {"W_values": [1, 2, 4, 8, 16], "T": 2, "runs": 1000, "seed": 0,
                     "samples_per_W": 20, "state": 1},
    },
    "consistency": {
        "required": ("chain", "N_values", "runs", "seed"),
        "defaults": {"chain": {"layered": {"W": 4, "T": 2}},
                     "N_values": [100, 1000, 10000, 100000], "runs": 20, "seed": 0,
                     "probe_state": 1},
    },
    "lambda-sweep": {
        "required": ("chain", "N", "lambda_values", "runs", "seed"),
        "defaults": {"chain": {"layered": {"W": 4, "T": 2}}, "N": 80,
                     "lambda_values": [0.0, 0.25, 0.5, 0.75, 1.0], "runs": 20, "seed": 0,
                     "n_eval": 400, "train": DEFAULT_TRAIN},
    },
}
META_KEYS = ("study", "version")


def _resolve_chain(value, base_dir):
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = (base_dir / path).resolve()
        if not path.exists():
            raise UsageError(f"chain file {path} does not exist")
        return _load_valid_chain(path), str(path)
    if isinstance(value, dict) and "layered" in value:
        spec = value["layered"]
        try:
            return build_layered_chain(LayeredChainSpec(spec["W"], spec["T"])), value
        except KeyError as exc:
            raise UsageError(f"layered chain config is missing key {exc.args[0]!r}") from exc
    if isinstance(value, dict):
        chain = tio.chain_from_dict(value)
        check_chain(chain)
        return chain, value
    raise UsageError("config key 'chain' must be a path, an inline chain or {'layered': {...}}")


def load_study_config(name, config_path, overrides):
    spec = STUDIES[name]
    if config_path is None:
        cfg = json.loads(json.dumps(spec["defaults"]))
        base_dir = Path.cwd()
    else:
        try:
            cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        if cfg.get("study", name) != name:
            raise UsageError(f"config was written for study {cfg['study']!r}, not {name!r}")
        for key in spec["required"]:
            if key not in cfg:
                raise UsageError(f"config is missing required key {key!r}")
        unknown = set(cfg) - set(spec["defaults"]) - set(META_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, val in spec["defaults"].items():
            cfg.setdefault(key, json.loads(json.dumps(val)))
        base_dir = Path(config_path).resolve().parent
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    for key in META_KEYS:
        cfg.pop(key, None)
    return cfg, base_dir


def _run_study(name, cfg, base_dir, n_jobs):
    try:
        if name == "mse-ratio":
            return run_mse_ratio_study(
                W_values=cfg["W_values"], T=cfg["T"], runs=cfg["runs"], seed=cfg["seed"],
                samples_per_W=cfg["samples_per_W"], state=cfg["state"], n_jobs=n_jobs,
            )
        chain, chain_entry = _resolve_chain(cfg["chain"], base_dir)
        cfg["chain"] = chain_entry
        if name == "consistency":
            return run_consistency_study(
                chain, N_values=cfg["N_values"], runs=cfg["runs"], seed=cfg["seed"],
                probe_state=cfg["probe_state"], n_jobs=n_jobs,
            )
        train = {**DEFAULT_TRAIN, **cfg["train"]}
        unknown = set(train) - set(DEFAULT_TRAIN)
        if unknown:
            raise UsageError(f"unknown train keys: {sorted(unknown)}")
        cfg["train"] = train
        tcfg = TrainConfig(**train)
        return run_lambda_sweep(
            chain, N=cfg["N"], lambda_values=cfg["lambda_values"], cfg=tcfg,
            runs=cfg["runs"], seed=cfg["seed"], n_eval=cfg["n_eval"], n_jobs=n_jobs,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (InvalidChainError, ChainStructureError, DatasetError)):
            raise
        raise UsageError(f"bad study config: {exc}") from exc


def cmd_study(args):
    cfg, base_dir = load_study_config(
        args.name, args.config, {"runs": args.runs, "seed": args.seed}
    )
    out_dir = _default_out_dir(args.out_dir)
    report = _run_study(args.name, cfg, base_dir, args.n_jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    tio.write_csv(out_dir / f"{args.name}.csv", report.header, report.table())
    tio.dump_json({"study": args.name, "version": __version__, **cfg}, out_dir / "manifest.json")
    return EXIT_OK


# parser ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="tcseq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="exact absorption probabilities of a chain file")
    s.add_argument("chain")
    s.add_argument("out")
    s.add_argument("--method", choices=("fixed-point", "closed-form"), default="fixed-point")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sample", help="sample labelled trajectories from a chain file")
    s.add_argument("chain")
    s.add_argument("out")
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    def data_args(s):
        s.add_argument("--states", type=int, default=None, help="M (inferred if omitted)")
        s.add_argument("--classes", type=int, default=None, help="K (inferred if omitted)")

    s = sub.add_parser("estimate", help="direct or indirect estimate from a dataset file")
    s.add_argument("data")
    s.add_argument("out")
    s.add_argument("--method", choices=("direct", "indirect"), default="indirect")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    data_args(s)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("train", help="gradient training of a tabular TC-lambda classifier")
    s.add_argument("data")
    s.add_argument("out_dir", nargs="?")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float, default=1.0)
    g.add_argument("--lookahead", type=float, default=None)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--refresh", choices=("per-step", "per-outer"), default="per-step")
    s.add_argument("--outer-iterations", type=int, default=None)
    s.add_argument("--reduction", choices=("mean", "sum"), default="mean")
    s.add_argument("--eval", default=None, help="held-out dataset for the successive-KL trace")
    data_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metric table of a trained model on a dataset")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("out")
    s.add_argument("--prefix-lens", nargs="+", default=["1", "full"])
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("study", help="run a replicated study")
    s.add_argument("name", choices=sorted(STUDIES))
    s.add_argument("config", nargs="?", default=None)
    s.add_argument("--out-dir", default=None)
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--n-jobs", type=int, default=1)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvalidChainError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ChainStructureError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergenceError, SolverError, TrainingDivergedError, TrajectoryCapError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
