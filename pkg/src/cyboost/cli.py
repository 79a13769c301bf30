"""Command-line interface: ``cyboost {train,predict,explain,diagnose,uplift,experiment}``.

Exit codes: 0 success, 2 schema errors, 3 mode/domain/data errors, 4 I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import smoothing as sm
from .archive import load_model, save_model
from .binning import CATEGORICAL, CONTINUOUS, EQUIDISTANT, FeatureSpec
from .conjugate import PriorConfig
from .engine import ADDITIVE, MODES, MULTIPLICATIVE, TrainingConfig, predict, train
from .errors import ArchiveError, CyboostError, SchemaError
from .explanation import diagnose_feature, explain_rows, render_table
from .forecasting import SplitConfig, default_config, run_experiment
from .uplift import group_weights, train_uplift

EXIT_SCHEMA, EXIT_DOMAIN, EXIT_IO = 2, 3, 4

log = logging.getLogger("cyboost")


def parse_feature_specs(text: str) -> list[FeatureSpec]:
    """Parse ``name:kind[:n_bins[:strategy]]`` entries and ``a*b`` compositions.

    Entries are separated by commas or newlines; ``#`` starts a comment.
    """
    specs = []
    for raw in text.replace(",", "\n").splitlines():
        entry = raw.split("#", 1)[0].strip()
        if not entry:
            continue
        if "*" in entry:
            specs.append(FeatureSpec.composed(*[p.strip() for p in entry.split("*")]))
            continue
        parts = entry.split(":")
        name = parts[0]
        kind = parts[1] if len(parts) > 1 else CATEGORICAL
        if kind not in (CATEGORICAL, CONTINUOUS):
            raise SchemaError(f"feature {name!r}: unknown kind {kind!r}")
        try:
            n_bins = int(parts[2]) if len(parts) > 2 else 100
        except ValueError:
            raise SchemaError(f"feature {name!r}: n_bins must be an integer") from None
        strategy = parts[3] if len(parts) > 3 else EQUIDISTANT
        specs.append(FeatureSpec(name, kind, n_bins=n_bins, strategy=strategy))
    if not specs:
        raise SchemaError("no features given")
    return specs


def _features_arg(value: str) -> list[FeatureSpec]:
    path = Path(value)
    if path.is_file():
        return parse_feature_specs(path.read_text())
    return parse_feature_specs(value)


def _read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=True)


def _target(df: pd.DataFrame, name: str) -> np.ndarray:
    if name not in df.columns:
        raise SchemaError(f"target column {name!r} not in data")
    y = pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=float)
    if np.isnan(y).any():
        row = int(np.flatnonzero(np.isnan(y))[0])
        raise SchemaError(f"target column {name!r}: row {row} is not numeric")
    return y


def _config(args, mode) -> TrainingConfig:
    return TrainingConfig(
        features=_features_arg(args.features),
        mode=mode,
        max_cycles=args.cycles,
        learning_rate_start=args.lr0,
        learning_rate_shape=args.lr_shape,
        priors=PriorConfig(estimator=args.estimator),
        smoothing=sm.SmootherConfig.off() if args.no_smoothing else None,
        seed=args.seed,
    )


def _print_history(model, out=sys.stdout):
    print(f"{'cycle':>5} {'eta':>8} {'metric':>14}", file=out)
    for h in model.history:
        mark = " *" if h["cycle"] == model.best_cycle else ""
        print(f"{h['cycle']:>5} {h['eta']:>8.4f} {h['metric']:>14.8g}{mark}", file=out)


def cmd_train(args) -> int:
    df = _read_csv(args.data)
    y = _target(df, args.target)
    w = None
    if args.weights:
        w = _target(df, args.weights)
    model = train(df, y, _config(args, args.mode), sample_weight=w)
    save_model(model, args.out)
    _print_history(model)
    print(f"model written to {args.out}")
    return 0


def _write_frame(frame: pd.DataFrame, out):
    if out:
        frame.to_csv(out, index=False, float_format="%.17g")
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")


def cmd_predict(args) -> int:
    model = load_model(args.model)
    df = _read_csv(args.data)
    _write_frame(pd.DataFrame({"prediction": predict(model, df)}), args.out)
    return 0


def cmd_explain(args) -> int:
    model = load_model(args.model)
    df = _read_csv(args.data)
    sink = open(args.out, "w") if args.out else (None if args.top_n else sys.stdout)
    try:
        for record in explain_rows(model, df):
            if sink is not None:
                sink.write(record.to_json() + "\n")
            if args.top_n:
                print(render_table(record, args.top_n))
    finally:
        if args.out and sink is not None:
            sink.close()
    return 0


def cmd_diagnose(args) -> int:
    model = load_model(args.model)
    df = _read_csv(args.data)
    y = _target(df, args.target)
    diag = diagnose_feature(model, df, y, args.feature)
    text = diag.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.grid_out and diag.grid is not None:
        Path(args.grid_out).write_text(json.dumps(diag.grid))
    return 0


def cmd_uplift(args) -> int:
    df = _read_csv(args.data)
    y = _target(df, args.target)
    if args.weight_col not in df.columns:
        raise SchemaError(f"weight column {args.weight_col!r} not in data")
    if args.treated_label is not None:
        w = group_weights(df[args.weight_col].to_numpy(), args.treated_label, args.control_label)
    else:
        w = _target(df, args.weight_col)
    model = train_uplift(df, y, w, _config(args, ADDITIVE), normalize=not args.raw_weights)
    save_model(model, args.out)
    print(f"average effect (mu) = {model.mu:.8g}")
    print(f"model written to {args.out}")
    return 0


def cmd_experiment(args) -> int:
    split = SplitConfig(args.train_end, args.test_start, args.test_end)
    cfg = default_config(
        n_bins=args.n_bins,
        max_cycles=args.cycles,
        learning_rate_start=args.lr0,
        seed=args.seed,
    )
    report = run_experiment(args.data, split, cfg, out_dir=args.out_dir)
    print(f"SMAPE = {report['smape_pct']:.4f}%  (n_test={report['n_test']}, "
          f"config {report['config_hash']})")
    return 0


def _add_training_flags(p):
    p.add_argument("--features", required=True,
                   help="comma-separated specs or a spec file (name:kind[:n_bins[:strategy]], a*b)")
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--lr0", type=float, default=0.1)
    p.add_argument("--lr-shape", choices=("linear", "logistic"), default="linear")
    p.add_argument("--estimator", choices=("mean", "median"), default="mean")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyboost", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mode", choices=MODES, default=MULTIPLICATIVE)
    p.add_argument("--weights", help="sample-weight column")
    p.add_argument("--out", required=True)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predictions for a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="per-row factor breakdowns (JSON lines)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--top-n", type=int, default=0,
                   help="print the N strongest contributions per row as a table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("diagnose", help="per-bin truth vs prediction for one feature")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--out")
    p.add_argument("--grid-out", help="JSON file for the grid of a 2D feature")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("uplift", help="train a causal-effect model with signed group weights")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--weight-col", required=True,
                   help="numeric signed weights, or group labels with --treated-label")
    p.add_argument("--treated-label")
    p.add_argument("--control-label")
    p.add_argument("--raw-weights", action="store_true",
                   help="use raw signed sums instead of group-normalized means")
    p.add_argument("--out", required=True)
    _add_training_flags(p)
    p.set_defaults(func=cmd_uplift)

    p = sub.add_parser("experiment", help="demand-forecasting SMAPE experiment")
    p.add_argument("--data", required=True, help="CSV with date,store,item,sales")
    p.add_argument("--train-end", default="2016-12-31")
    p.add_argument("--test-start", default="2017-01-01")
    p.add_argument("--test-end", default="2017-03-31")
    p.add_argument("--n-bins", type=int, default=100)
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--lr0", type=float, default=0.1)
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_experiment)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, (OSError, ArchiveError)):
        return EXIT_IO
    return EXIT_DOMAIN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "treated_label", None) is not None and args.control_label is None:
        print("error: --control-label is required with --treated-label", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        return args.func(args)
    except (CyboostError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
