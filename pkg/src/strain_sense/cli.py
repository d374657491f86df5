"""
Command-line entry point: ``strain-sense <subcommand> ...``.

Subcommands follow the pipeline order::

    gen | import -> featurize -> train | sweep -> eval -> embed -> watch

The default seed is 7; the ``STRAIN_SENSE_SEED`` environment variable
overrides it and ``--seed`` overrides both.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path

from . import __version__
from .cnn import load_model, save_model
from .dataset import (
    export_canonical,
    featurize_dataset,
    generate_synthetic,
    import_canonical,
    import_wide_csv,
    load_profiles,
)
from .errors import StrainSenseError
from .optim import OptimizerSpec
from .reports import confusion_csv, emit_reports, write_text_atomic
from .signal import norm_stats_path, read_norm_stats, read_spectrograms, write_norm_stats, write_spectrograms
from .stream import watch
from .training import TrainConfig, evaluate, fit_and_evaluate, split_dataset, sweep, sweep_table_csv
from .tsne import TsneConfig, extract_features, raw_features, tsne

DEFAULT_SEED = 7
SEED_ENV = "STRAIN_SENSE_SEED"
DEFAULT_GRID = "gd:0.0002,adagrad:0.002,adam:0.04,adam:0.02"

log = logging.getLogger("strain_sense")


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"strain-sense: error: {SEED_ENV} must be an integer, got {raw!r}")


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise StrainSenseError(f"no such file: {path}")
    return path


def _load_specs(path):
    specs = read_spectrograms(_require(path))
    if not specs:
        raise StrainSenseError(f"{path}: contains no spectrograms")
    sidecar = norm_stats_path(path)
    stats = read_norm_stats(sidecar) if sidecar.exists() else None
    return specs, stats


def _load_dataset(path):
    path = _require(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
    if "time_s" in header and "label" in header:
        return import_canonical(path)
    return import_wide_csv(path)


# -- subcommands --------------------------------------------------------------

def cmd_gen(args):
    profiles = load_profiles(args.profiles)
    ds = generate_synthetic(profiles, args.duration, args.seed)
    export_canonical(ds, args.output)
    return {
        "outputs": {"dataset": str(args.output)},
        "classes": ds.labels,
        "samples_per_class": len(ds.series[ds.labels[0]]),
        "seed": args.seed,
    }


def cmd_import(args):
    cols = None if args.columns is None else [c.strip() for c in args.columns.split(",")]
    ds = import_wide_csv(_require(args.input), args.time_column, cols, args.trim_tail_s)
    export_canonical(ds, args.output)
    return {
        "outputs": {"dataset": str(args.output)},
        "classes": ds.labels,
        "samples_per_class": len(ds.series[ds.labels[0]]),
        "sample_rate_hz": ds.sample_rate_hz,
    }


def cmd_featurize(args):
    ds = _load_dataset(args.input)
    specs, stats = featurize_dataset(ds)
    write_spectrograms(args.output, specs)
    sidecar = norm_stats_path(args.output)
    write_norm_stats(sidecar, stats)
    counts = {}
    for s in specs:
        counts[s.label] = counts.get(s.label, 0) + 1
    return {
        "outputs": {"spectrograms": str(args.output), "norm_stats": str(sidecar)},
        "spectrograms": len(specs),
        "per_class": counts,
    }


def _train_config(args, optimizer=None) -> TrainConfig:
    return TrainConfig(
        optimizer=optimizer or OptimizerSpec(args.optimizer, args.lr),
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
        train_fraction=args.train_fraction,
        growth_rate=args.growth_rate,
    )


def cmd_train(args):
    specs, stats = _load_specs(args.input)
    config = _train_config(args)
    net, report = fit_and_evaluate(specs, config, stats=stats)
    save_model(args.output, net)
    outputs = {"model": str(args.output)}
    if args.report_dir:
        for p in emit_reports(report, args.report_dir):
            outputs[p.stem + p.suffix.replace(".", "_")] = str(p)
    return {
        "outputs": outputs,
        "train_accuracy": report.train_accuracy,
        "val_accuracy": report.val_accuracy,
        "test_accuracy": report.test_accuracy,
        "final_train_cost": report.train_costs[-1],
        "final_val_cost": report.val_costs[-1],
        "counts": report.counts,
        "wall_clock_s": report.wall_clock_s,
    }


def cmd_sweep(args):
    specs, stats = _load_specs(args.input)
    grid = [OptimizerSpec.parse(item) for item in args.grid.split(",") if item.strip()]
    base = _train_config(args, optimizer=grid[0] if grid else None)
    rows = sweep(specs, grid, base, stats=stats, workers=args.workers)
    write_text_atomic(args.output, sweep_table_csv(rows))
    return {
        "outputs": {"table": str(args.output)},
        "rows": [
            {
                "optimizer": r.optimizer.kind,
                "learning_rate": r.optimizer.learning_rate,
                "cost": r.final_val_cost,
                "test_accuracy": r.test_accuracy,
                "optimal": r.optimal,
            }
            for r in rows
        ],
    }


def _select(specs, net, args):
    if args.split == "all":
        return specs
    train, test = split_dataset(specs, args.train_fraction, args.seed, net.label_map)
    return train if args.split == "train" else test


def cmd_eval(args):
    specs, _ = _load_specs(args.input)
    net = load_model(_require(args.model))
    subset = _select(specs, net, args)
    acc, cm = evaluate(net, subset, net.norm_stats)
    outputs = {}
    if args.report_dir:
        Path(args.report_dir).mkdir(parents=True, exist_ok=True)
        p = write_text_atomic(Path(args.report_dir) / "confusion.csv", confusion_csv(cm, net.label_map))
        outputs["confusion_csv"] = str(p)
    correct = int(cm.trace())
    print(f"accuracy {acc:.4f} ({correct} out of {len(subset)})", file=sys.stderr)
    return {
        "outputs": outputs,
        "accuracy": acc,
        "correct": correct,
        "total": len(subset),
        "confusion": cm.tolist(),
        "labels": net.label_map,
    }


def cmd_embed(args):
    specs, stats = _load_specs(args.input)
    cfg = TsneConfig(
        perplexity=args.perplexity,
        early_exaggeration=args.early_exaggeration,
        iterations=args.iterations,
        exaggeration_iters=args.exaggeration_iters,
        learning_rate=args.tsne_lr,
        seed=args.seed,
    )
    if args.raw:
        subset = specs
        if args.split != "all":
            train, test = split_dataset(specs, args.train_fraction, args.seed)
            subset = train if args.split == "train" else test
        feats = raw_features(subset, stats)
    else:
        if not args.model:
            raise StrainSenseError("embed needs --model unless --raw is given")
        net = load_model(_require(args.model))
        subset = _select(specs, net, args)
        feats = extract_features(net, subset, net.norm_stats)
    emb = tsne(feats, cfg)
    out_dir = Path(args.output)
    paths = emit_reports(emb, out_dir)
    return {
        "outputs": {p.stem + "_" + p.suffix.lstrip("."): str(p) for p in paths},
        "points": len(emb),
        "kl": emb.kl,
        "split": args.split,
        "source": "raw" if args.raw else "cnn",
    }


def cmd_watch(args):
    net = load_model(_require(args.model))
    if args.replay:
        _require(args.input)
    sink_fh = None
    if args.output and args.output != "-":
        sink_fh = open(args.output, "a", encoding="utf-8")
        sink = sink_fh
    else:
        sink = sys.stdout
    count = {"events": 0}

    def emit(ev):
        count["events"] += 1
        sink.write(ev.to_json() + "\n")
        sink.flush()

    stop = threading.Event()
    try:
        state = watch(
            args.input,
            net,
            net.norm_stats,
            poll_interval_ms=args.poll_ms,
            sink=emit,
            stop=stop,
            once=args.replay,
            idle_timeout_s=args.idle_timeout,
            on_event=args.on_event,
        )
    except KeyboardInterrupt:
        stop.set()
        state = None
    finally:
        if sink_fh is not None:
            sink_fh.close()
    return {
        "outputs": {"events": args.output or "-"},
        "events": count["events"],
        "buffered": None if state is None else state.buffered,
    }


# -- parser ------------------------------------------------------------------

def _add_train_flags(p, seed):
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--growth-rate", type=int, default=8)
    p.add_argument("--validation-fraction", type=float, default=0.15)
    p.add_argument("--train-fraction", type=float, default=0.85)
    p.add_argument("--workers", type=int, default=1, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=seed, help=f"random seed (default {seed})")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="strain-sense", description="Strain spectrogram classification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic labeled dataset")
    p.add_argument("--profiles", default="default4", help="default4, impact3 or a profile JSON file")
    p.add_argument("--duration", type=float, default=700.0, help="seconds per class")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("import", parents=[common], help="convert a wide table into the canonical CSV")
    p.add_argument("input")
    p.add_argument("--time-column", default="Time (sec)")
    p.add_argument("--columns", help="comma-separated class columns (default: all others)")
    p.add_argument("--trim-tail-s", type=float, default=0.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("featurize", parents=[common], help="turn a dataset into 10x5 spectrograms")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train the CNN on a spectrogram file")
    p.add_argument("input")
    p.add_argument("--optimizer", default="adam", help="gd, adagrad or adam")
    p.add_argument("--lr", type=float, default=0.02)
    _add_train_flags(p, seed)
    p.add_argument("--report-dir")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="compare optimizer / learning-rate settings")
    p.add_argument("input")
    p.add_argument("--grid", default=DEFAULT_GRID, help=f"kind:lr list (default {DEFAULT_GRID})")
    _add_train_flags(p, seed)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", parents=[common], help="score a model on a spectrogram file")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="test")
    p.add_argument("--train-fraction", type=float, default=0.85)
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="3D t-SNE of learned features")
    p.add_argument("input")
    p.add_argument("--model")
    p.add_argument("--raw", action="store_true", help="embed normalized spectrograms instead of CNN features")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--train-fraction", type=float, default=0.85)
    p.add_argument("--perplexity", type=float, default=13.0)
    p.add_argument("--early-exaggeration", type=float, default=4.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--exaggeration-iters", type=int, default=250)
    p.add_argument("--tsne-lr", type=float, default=200.0)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("watch", parents=[common], help="classify a growing CSV window by window")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--poll-ms", type=int, default=200)
    p.add_argument("--replay", action="store_true", help="process the current file content and exit")
    p.add_argument("--idle-timeout", type=float, help="exit after this many seconds without new rows")
    p.add_argument("--on-event", help="shell command run per event, event JSON on stdin")
    p.add_argument("-o", "--output", help="event JSON Lines file (default stdout)")
    p.set_defaults(func=cmd_watch)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        summary = args.func(args)
    except (StrainSenseError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"strain-sense {args.command}: error: {msg}", file=sys.stderr)
        return 1
    if args.json:
        doc = {"command": args.command, "status": "ok", **summary}
        print(json.dumps(doc, sort_keys=True))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
