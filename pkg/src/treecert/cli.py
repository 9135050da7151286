"""Command-line front end: ``treecert train | verify | report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetParseError, minmax_scale, parse_dataset, subsample, train_test_split
from .geometry import parse_norm
from .models import ModelFormatError, load_model, save_model
from .report import METHODS, MethodMismatchError, VerifyOptions, merge_summaries, read_summaries, verify_dataset, write_merged, write_report
from .stump_verify import ResourceLimitError
from .training import TrainConfig, TrainingError, fit_stump_ensemble, fit_tree_ensemble

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_RESOURCE = 4
EXIT_TRAINING = 5

log = logging.getLogger("treecert")


class UsageError(Exception):
    pass


def _classes(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError("--classes takes two labels, e.g. 1,5")
    try:
        return tuple(float(t) for t in parts)
    except ValueError:
        raise UsageError(f"bad --classes value {text!r}") from None


def _norm(text):
    try:
        return parse_norm(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_data_flags(sp):
    sp.add_argument("--data", required=True, help="sparse 'label idx:val ...' file")
    sp.add_argument("--dimension", type=int, default=None)
    sp.add_argument("--classes", default=None, help="a,b: keep labels a (+1) and b (-1)")
    sp.add_argument("--scale", action="store_true", help="min-max scale features to [0, 1] over the whole file")
    sp.add_argument("--subsample", type=int, default=None)
    sp.add_argument("--test-fraction", type=float, default=0.0, help="hold out this fraction (ceil) as the test split")
    sp.add_argument("--split", choices=("train", "test", "all"), default="all")
    sp.add_argument("--stratify", action="store_true", help="keep the class balance in both splits")
    sp.add_argument("--seed", type=int, default=0)


def load_split(args) -> Dataset:
    """Parse, scale, subsample and split exactly as the flags say; deterministic."""
    data = parse_dataset(args.data, args.dimension, _classes(args.classes))
    if args.scale:
        data = minmax_scale(data)
    if args.subsample is not None:
        data = subsample(data, args.subsample, args.seed)
    if args.split == "all":
        return data
    if not 0 < args.test_fraction < 1:
        raise UsageError("--split train/test needs 0 < --test-fraction < 1")
    train, test = train_test_split(data, args.test_fraction, args.seed, args.stratify)
    return train if args.split == "train" else test


def cmd_train(args) -> int:
    data = load_split(args)
    if len(data) == 0 and args.rounds > 0:
        raise TrainingError("cannot train on an empty dataset")
    try:
        config = TrainConfig(
            p=_norm(args.norm),
            epsilon=args.eps,
            rounds=args.rounds,
            precision=args.precision,
            schedule_length=args.schedule,
            shrinkage=args.lr,
            max_depth=args.depth,
            candidate_cap=args.candidate_cap,
            coord_descent_iters=args.cd_iters,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.kind == "stumps":
        model, logs = fit_stump_ensemble(data.X, data.y, config)
    else:
        model, logs, _ = fit_tree_ensemble(data.X, data.y, config)
    save_model(model, args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("round", "epsilon", "robust_loss", "seconds", "feature", "threshold"))
        for e in logs:
            w.writerow((e.round, repr(e.epsilon), repr(e.robust_loss), f"{e.seconds:.4f}", e.feature, repr(e.threshold)))
    print(f"trained {len(logs)} {args.kind} on {len(data)} samples -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = load_model(args.model)
    data = load_split(args)
    if data.dimension != model.dimension:
        if data.dimension > model.dimension:
            raise UsageError(f"dataset has {data.dimension} features, model expects {model.dimension}")
        data = Dataset(np.pad(data.X, ((0, 0), (0, model.dimension - data.dimension))), data.y, data.name)
    options = VerifyOptions(args.method, _norm(args.norm), args.eps, args.precision, args.clique_size, args.levels)
    try:
        report = verify_dataset(model, data.X, data.y, options, args.jobs, Path(args.model).name, data.name)
    except MethodMismatchError as exc:
        raise UsageError(str(exc)) from None
    summary_path = write_report(report, args.out)
    s = report.summary()
    print(json.dumps({k: s[k] for k in ("method", "norm", "epsilon", "standard_err", "verified_err", "mean_time_ms")}))
    log.info("summary written to %s", summary_path)
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = read_summaries(args.dir)
    rows = merge_summaries(summaries)
    write_merged(rows, args.out)
    bad = sum(1 for r in rows if not r["monotone_in_eps"])
    print(f"{len(rows)} rows -> {args.out}" + (f"; {bad} epsilon-monotonicity violations" if bad else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treecert", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a robust stump or tree ensemble")
    _add_data_flags(tr)
    tr.add_argument("--out", required=True, help="model document path")
    tr.add_argument("--log", default=None, help="per-round CSV log (default: <out>.log.csv)")
    tr.add_argument("--kind", choices=("stumps", "trees"), default="stumps")
    tr.add_argument("--norm", default="l1", help="l0 | l1 | l2 | linf | any p > 0")
    tr.add_argument("--eps", type=float, default=0.0)
    tr.add_argument("--rounds", type=int, default=20)
    tr.add_argument("--lr", type=float, default=1.0, help="shrinkage in (0, 1]")
    tr.add_argument("--schedule", type=int, default=1, help="epsilon ramp length (rounds, or depth for trees)")
    tr.add_argument("--precision", type=float, default=0.01, help="DP grid step on the eps**p budget")
    tr.add_argument("--depth", type=int, default=1)
    tr.add_argument("--candidate-cap", type=int, default=256)
    tr.add_argument("--cd-iters", type=int, default=10, help="coordinate-descent sweeps per split")
    tr.set_defaults(func=cmd_train)

    ve = sub.add_parser("verify", help="verify a model on a dataset")
    _add_data_flags(ve)
    ve.add_argument("--model", required=True)
    ve.add_argument("--out", required=True, help="per-sample CSV; summary goes to <out stem>.summary.json")
    ve.add_argument("--method", choices=METHODS, required=True)
    ve.add_argument("--norm", required=True)
    ve.add_argument("--eps", type=float, required=True, help="radius (integer k for l0)")
    ve.add_argument("--precision", type=float, default=0.01)
    ve.add_argument("--clique-size", type=int, default=3)
    ve.add_argument("--levels", type=int, default=2)
    ve.add_argument("--jobs", type=int, default=1)
    ve.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="merge *.summary.json files into one CSV")
    rp.add_argument("dir")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        eps = getattr(args, "eps", 0.0)
        if not (math.isfinite(eps) and eps >= 0):
            raise UsageError("--eps must be a finite non-negative number")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetParseError, ModelFormatError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
