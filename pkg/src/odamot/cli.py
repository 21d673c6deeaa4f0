"""Command-line entry points: pretrain, simulate, track, evaluate, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 frames out of
order.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
from sklearn.metrics import average_precision_score

from . import errors
from .config import RunConfig, describe_keys
from .linmodel import batch_train, load_model, normalize_features, save_model
from .metricsio import (COLUMNS, clear_mot, format_csv, format_table, parse_kitti, read_csv,
                        write_kitti)
from .providers import iter_sequence, load_features, write_sequence
from .sim import generate, make_pretrain_set
from .tracker import Tracker

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ORDER = 0, 2, 3, 4

DATA_ERRORS = (OSError, errors.BadMagic, errors.TruncatedFile, errors.MalformedRow,
               errors.NonMonotoneFrames, errors.DimMismatch, errors.FrameRangeMismatch,
               errors.Degenerate, ValueError)


class DataError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.apply(args.set)
    for name in ("model", "data", "gt", "results", "adapted", "out", "pos", "neg"):
        v = getattr(args, name, None)
        if v is not None and not isinstance(v, list):
            cfg.set(f"paths.{name}", str(v))
    if getattr(args, "mode", None):
        cfg.set("mode", args.mode)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", str(args.seed))
    return cfg


def _need(cfg, name) -> Path:
    p = cfg.path(name)
    if p is None:
        raise errors.ConfigError(f"paths.{name} is required")
    return p


def _split(X, y, frac, seed):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(y))
    n_test = int(round(frac * len(y)))
    return idx[n_test:], idx[:n_test]


# ---------------------------------------------------------------- commands

def cmd_pretrain(cfg: RunConfig) -> int:
    pc = cfg.pretrain()
    tc = cfg.tracker()
    out = _need(cfg, "model")
    if cfg.path("pos") or cfg.path("neg"):
        pos = load_features(_need(cfg, "pos"))[1].astype(float)
        neg = load_features(_need(cfg, "neg"))[1].astype(float)
        if pos.shape[1] != neg.shape[1]:
            raise errors.DimMismatch("positive and negative feature files differ in dim")
    else:
        pos, neg = make_pretrain_set(cfg.scenario(), pc.n_pos, pc.n_neg)
    X = normalize_features(np.vstack([pos, neg]), tc.feature_norm)
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    tr, te = _split(X, y, pc.heldout, cfg.seed)
    Xtr, ytr = X[tr], y[tr]
    model = batch_train(Xtr[ytr > 0], Xtr[ytr < 0], lam=pc.lam, rounds=pc.rounds,
                        mine_prob=pc.mine_prob, seed=cfg.seed)
    save_model(model, out)
    if len(te):
        p = model.prob(X[te])
        acc = float(np.mean((p >= 0.5) == (y[te] > 0)))
        ap = float(average_precision_score(y[te] > 0, p)) if (y[te] > 0).any() else float("nan")
        print(f"held-out accuracy {acc:.4f}  AP {ap:.4f}  ({len(te)} samples)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    sc = cfg.scenario()
    out = _need(cfg, "out")
    bundles, gt = generate(sc)
    write_sequence(bundles, out)
    write_kitti(gt, out / "gt.txt")
    (out / "scenario.cfg").write_text(cfg.dump())
    print(f"wrote {len(bundles)} frames, {len({r.track_id for r in gt.rows})} objects to {out}")
    return EXIT_OK


def cmd_track(cfg: RunConfig) -> int:
    tc = cfg.tracker()
    data = _need(cfg, "data")
    results = _need(cfg, "results")
    if not data.is_dir():
        raise DataError(f"{data} is not a sequence directory")
    model = load_model(_need(cfg, "model"))
    tracker = Tracker(model, tc)
    seq = tracker.run(iter_sequence(data, model.dim))
    write_kitti(seq, results)
    print(f"{len({r.track_id for r in seq.rows})} tracks, {len(seq.rows)} boxes -> {results}")
    if tc.mode == "ODAMOT":
        adapted = cfg.path("adapted") or results.with_suffix(".odmw")
        save_model(tracker.adapted_model, adapted)
        print(f"adapted detector -> {adapted}")
    return EXIT_OK


def cmd_evaluate(gt_path, results, names, csv_out) -> int:
    """One table row per results file, all scored against the same ground truth."""
    if not results:
        raise errors.ConfigError("at least one --results file is required")
    if names and len(names) != len(results):
        raise errors.ConfigError("give one --name per --results file")
    names = names or ([Path(r).stem for r in results] if len(results) > 1 else ["tracker"])
    gt = parse_kitti(gt_path)
    rows = {}
    for name, path in zip(names, results):
        rows[name] = clear_mot(gt, parse_kitti(path)).row()
    sys.stdout.write(format_table(rows))
    if csv_out:
        Path(csv_out).write_text(format_csv(rows))
    return EXIT_OK


def cmd_report(paths, csv_out) -> int:
    grouped = defaultdict(list)
    for p in paths:
        for method, vals in read_csv(p):
            grouped[method].append(vals)
    rows = {m: {c: float(np.median([v[c] for v in vs])) for c in COLUMNS}
            for m, vs in grouped.items()}
    sys.stdout.write(format_table(rows))
    if csv_out:
        Path(csv_out).write_text(format_csv(rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    keys = "configuration keys (key = default):\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="odamot", description="Online domain-adapted multi-object tracking.",
        epilog=keys, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=keys, formatter_class=fmt)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override one configuration key (repeatable)")
        p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        return p

    p = add("pretrain", "train the category detector on source-domain features")
    p.add_argument("--model", type=Path, help="output ODMW file")
    p.add_argument("--pos", type=Path, help="ODFT file of positive features")
    p.add_argument("--neg", type=Path, help="ODFT file of negative features")

    p = add("simulate", "write a synthetic target-domain sequence and its ground truth")
    p.add_argument("--out", type=Path, help="output sequence directory")

    p = add("track", "run the tracker over a sequence directory")
    p.add_argument("--mode", choices=["odamot", "cit", "cft"], type=str.lower)
    p.add_argument("--model", type=Path, help="pretrained ODMW file")
    p.add_argument("--data", type=Path, help="sequence directory")
    p.add_argument("--results", type=Path, help="KITTI results file to write")
    p.add_argument("--adapted", type=Path, help="adapted detector output (odamot)")

    p = add("evaluate", "CLEAR MOT metrics of a results file against ground truth")
    p.add_argument("--gt", type=Path, help="KITTI ground truth")
    p.add_argument("--results", type=Path, action="append", default=[],
                   help="KITTI results (repeat to compare several methods)")
    p.add_argument("--name", action="append", default=[],
                   help="method name per results file")
    p.add_argument("--csv", type=Path, help="also write the row as CSV")

    p = add("report", "median metrics per method over several CSV files")
    p.add_argument("csvs", nargs="+", type=Path)
    p.add_argument("--csv", type=Path, help="write the aggregated table as CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "track":
            return cmd_track(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(_need(cfg, "gt"), args.results, args.name, args.csv)
        return cmd_report(args.csvs, args.csv)
    except errors.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.OutOfOrderFrame as e:
        print(f"frame order error: {e}", file=sys.stderr)
        return EXIT_ORDER
    except (DataError, *DATA_ERRORS) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
