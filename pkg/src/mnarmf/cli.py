"""Command-line entry point: ``mnarmf <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import dataio, experiment
from .core import BoundConfig
from .dataio import ConfigError
from .propensity import ESTIMATORS, OneBitMCConfig, one_bit_mc, true_propensity_naive_bayes
from .trainers import TRAINERS, trace_bound

log = logging.getLogger("mnarmf")

PROPENSITY_METHODS = ("user", "item", "user-item", "1bitmc", "nb-true")


def _setup_logging(out: Path | None, verbose: bool):
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    handlers = [console]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(out / "run.log", mode="w"))
    logging.basicConfig(level=logging.INFO if verbose or out else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        handlers=handlers, force=True)


def _load_config(path) -> dict:
    return dataio.read_config(path) if path else {}


def _write_metrics(row: dict, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


def _print_row(row: dict):
    for key, value in row.items():
        print(f"{key}\t{value:.6f}" if isinstance(value, float) else f"{key}\t{value}")


def cmd_generate_synthetic(args):
    cfg = _load_config(args.spec)
    if args.seed is not None:
        cfg["world_seed"] = str(args.seed)
    for key in ("num_users", "num_items"):
        if getattr(args, key) is not None:
            cfg[key] = str(getattr(args, key))
    spec = experiment.synth_spec_from(cfg)
    R, P, observed, test = experiment.synth_data(spec, int(cfg.get("test_items_per_user", 10)))
    out = Path(args.out)
    dataio.write_triples(observed, out / "train.txt")
    dataio.write_triples(test, out / "test.txt")
    dataio.write_dense(R, out / "true_ratings.txt")
    dataio.write_propensity(P, out / "propensity.txt")
    log.info("wrote %d train and %d test triples to %s", len(observed), len(test), out)
    print(f"train\t{len(observed)}\ntest\t{len(test)}")


def cmd_estimate_propensity(args):
    train = dataio.load_triples(args.train, args.num_users, args.num_items)
    cfg = _load_config(args.config)
    if args.method == "nb-true":
        if not args.mcar:
            raise ConfigError("nb-true needs --mcar with a small MCAR sample")
        prop = true_propensity_naive_bayes(train, dataio.load_triples(args.mcar, *train.shape))
    elif args.method == "1bitmc":
        prop = one_bit_mc(train, OneBitMCConfig(
            nuclear_cap_scale=float(cfg.get("onebit_tau", 1.0)),
            entry_cap=float(cfg.get("onebit_gamma", 5.0)),
            iterations=int(cfg.get("onebit_iterations", 500))))
    else:
        prop = ESTIMATORS[args.method](train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_propensity(prop, out / "propensity.txt")
    dense = prop.to_dense()
    print(f"min\t{dense.min():.6g}\nmax\t{dense.max():.6g}\nmean\t{dense.mean():.6g}")


def _train_propensity(args, cfg, work):
    if args.propensity:
        prop = dataio.read_propensity(args.propensity)
        if prop.shape != work.train.shape:
            raise ConfigError(f"propensity shape {prop.shape} does not match data {work.train.shape}")
        return prop
    kind = args.propensity_method or cfg.get("propensity", "user")
    if kind not in PROPENSITY_METHODS:
        raise ConfigError(f"unknown propensity {kind!r}")
    if kind == "nb-true":
        return true_propensity_naive_bayes(work.train, work.test)
    return experiment.estimate_propensity(kind, work, cfg)


def cmd_train(args):
    cfg = _load_config(args.config)
    observed = dataio.load_triples(args.train, args.num_users, args.num_items)
    if args.mcar:
        mcar = dataio.load_triples(args.mcar, *observed.shape)
    elif args.method == "cause" or args.propensity_method == "nb-true":
        raise ConfigError(f"{args.method} needs --mcar")
    else:
        mcar = None
    fraction = float(cfg.get("validation_fraction", 0.1))
    if fraction > 0:
        train, validation = dataio.split_train_val(observed, fraction, int(cfg.get("split_seed", 0)))
    else:
        train, validation = observed, None
    true_ratings = dataio.read_dense(args.true_ratings) if args.true_ratings else None
    work = experiment.Workload(train, validation, mcar, true_ratings)
    config = experiment.method_config(cfg, args.method, args.seed if args.seed is not None
                                      else int(cfg.get("seed", 0)))
    prop = _train_propensity(args, cfg, work) if args.method in ("mf-ips", "mf-dr") else None
    if args.method == "cause":
        # The supplied MCAR file is used as-is.
        cfg = {**cfg, "cause_mcar_fraction": "1"}
    model, trace = experiment.train_method(args.method, work, config, cfg, prop)

    out = Path(args.out)
    dataio.write_model(model, out / "model.txt")
    if trace is not None:
        dataio.write_trace(trace, out / "trace.csv")
        dataio.write_model(trace.adversary, out / "adversary.txt")
    log.info("trained %s (%s) on %d triples", args.method, config, len(train))
    print(f"model\t{out / 'model.txt'}")


def cmd_evaluate(args):
    model = dataio.read_model(args.model)
    test = dataio.load_triples(args.test, *model.shape)
    true_ratings = dataio.read_dense(args.true_ratings) if args.true_ratings else None
    work = experiment.Workload(test, None, test, true_ratings)
    row = experiment.evaluate(model, work, args.k, args.conventional_gain, args.catalog)
    _print_row(row)
    if args.out:
        out = Path(args.out)
        _write_metrics(row, out / "metrics.csv")


def cmd_run_experiment(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.k is not None:
        cfg["k"] = str(args.k)
    reports = experiment.run_experiment(cfg, args.out)
    for r in reports:
        cells = "  ".join(f"{m}={r.mean(m):.4f}±{r.std(m):.4f}" for m in r.metrics)
        print(f"{r.method}\t{cells}")


def cmd_trace_bound(args):
    model = dataio.read_model(args.model)
    adversary = dataio.read_model(args.adversary)
    data = dataio.load_triples(args.train, *model.shape)
    true_ratings = dataio.read_dense(args.true_ratings) if args.true_ratings else None
    record = trace_bound(model, adversary, data, BoundConfig(confidence=args.confidence),
                         true_ratings, rng=args.seed if args.seed is not None else 0)
    row = {k: v for k, v in record.as_row().items() if k != "iteration" and v is not None}
    _print_row(row)
    if args.out:
        _write_metrics(row, Path(args.out) / "bound.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnarmf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None)
        return p

    def dims(p):
        p.add_argument("--num-users", type=int, default=None)
        p.add_argument("--num-items", type=int, default=None)

    p = add("generate-synthetic", cmd_generate_synthetic, "write a synthetic MNAR world")
    p.add_argument("--spec", "--config", dest="spec", default=None)
    p.add_argument("--out", required=True)
    dims(p)

    p = add("estimate-propensity", cmd_estimate_propensity, "estimate a propensity matrix")
    p.add_argument("--method", choices=PROPENSITY_METHODS, required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--mcar", default=None, help="MCAR sample for nb-true")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    dims(p)

    p = add("train", cmd_train, "train one model")
    p.add_argument("--method", choices=TRAINERS, required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--propensity", default=None, help="dense propensity file")
    p.add_argument("--propensity-method", choices=PROPENSITY_METHODS, default=None)
    p.add_argument("--mcar", default=None, help="MCAR sample for cause or nb-true")
    p.add_argument("--true-ratings", default=None)
    p.add_argument("--out", required=True)
    dims(p)

    p = add("evaluate", cmd_evaluate, "score a model on a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--conventional-gain", action="store_true", help="use 2^R - 1 gains")
    p.add_argument("--catalog", action="store_true", help="rank over the full item catalog")
    p.add_argument("--true-ratings", default=None)
    p.add_argument("--out", default=None)

    p = add("run-experiment", cmd_run_experiment, "multi-seed comparison of methods")
    p.add_argument("--config", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("trace-bound", cmd_trace_bound, "evaluate the generalization bound components")
    p.add_argument("--model", required=True)
    p.add_argument("--adversary", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--true-ratings", default=None)
    p.add_argument("--confidence", type=float, default=0.05)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(Path(args.out) if getattr(args, "out", None) else None, args.verbose)
    try:
        args.func(args)
    except (ConfigError, dataio.ParseError, dataio.RatingRangeError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
