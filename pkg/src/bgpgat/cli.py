"""Command-line entry point: ``bgpgat <subcommand> ...``."""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .artifacts import atomic_write_bytes, atomic_write_text, canonical_json, write_manifest
from .augment import COMPONENTS, NormalizerStats, WindowSet, augment_series, slice_windows
from .experiments import (ARMS, ExperimentConfig, all_arm_sets, ablate, edges_to_csv,
                          export_attention_graph, holdout_all, holdout_event_run, multiclass_run,
                          rows_to_csv, run_experiment, split_targets, sweep)
from .features import (EventLabelSpec, FeatureSeries, bin_updates, read_feature_csv,
                       series_to_csv)
from .ingest import IngestConfig, load_records, merge_streams, write_text_log
from .model import load_checkpoint, save_checkpoint
from .stl import StlConfig
from .synth import SIGNATURES, SynthEvent, synth_events
from .training import SplitConfig, TrainConfig, evaluate

log = logging.getLogger("bgpgat")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_triple(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return vals


# --- shared option groups --------------------------------------------------------

def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--period", type=int, default=35, help="STL period (default 35)")
    g.add_argument("--window", type=int, default=25, help="window length m (default 25)")
    g.add_argument("--hidden", type=int, default=64, help="LSTM hidden size (default 64)")
    g.add_argument("--no-stl", action="store_true", help="use raw features only")
    g.add_argument("--no-feature-gat", action="store_true")
    g.add_argument("--no-temporal-gat", action="store_true")
    g.add_argument("--fusion-weights", type=_float_triple, default=(0.5, 1.0, 0.5))
    g.add_argument("--activation", choices=("tanh", "elu", "relu", "identity"), default="tanh")
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--dropout", type=float, default=0.2)
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--patience", type=int, default=10)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--class-weights", choices=("inverse", "uniform"), default="inverse")
    g.add_argument("--split", type=_float_triple, default=(6.0, 1.0, 3.0),
                   help="train,val,test ratios (default 6,1,3)")
    g.add_argument("--chronological", action="store_true",
                   help="contiguous time blocks instead of a stratified random split")
    g.add_argument("--seed", type=int, default=0)


def _experiment_config(args) -> ExperimentConfig:
    train = TrainConfig(lr=args.lr, dropout=args.dropout, epochs=args.epochs,
                        optimizer=args.optimizer, batch_size=args.batch_size,
                        patience=args.patience, class_weights=args.class_weights, seed=args.seed)
    split = SplitConfig(ratios=tuple(args.split), stratified=not args.chronological,
                        chronological=args.chronological, seed=args.seed)
    return ExperimentConfig(period=args.period, window=args.window, stl=not args.no_stl,
                            feature_gat=not args.no_feature_gat,
                            temporal_gat=not args.no_temporal_gat, hidden=args.hidden,
                            fusion_weights=tuple(args.fusion_weights),
                            activation=args.activation, split=split, train=train)


def _read_series(paths: Sequence[str]) -> list[FeatureSeries]:
    return [read_feature_csv(p) for p in paths]


def _write(path: str, text: str, command: str, config: dict, inputs=()) -> None:
    atomic_write_text(path, text)
    write_manifest(path, command, config, list(inputs))


# --- subcommands -----------------------------------------------------------------

def cmd_ingest(args) -> dict:
    cfg = IngestConfig(paths=[Path(p) for p in args.sources],
                       peer_as=frozenset(args.peer_as) if args.peer_as else None,
                       start=args.start, end=args.end, family=args.family)
    streams, totals = [], {}
    for p in args.sources:
        records, counters = load_records(p, cfg)
        if args.sort:
            records.sort(key=lambda r: r.timestamp)
        streams.append(records)
        for k, v in vars(counters).items():
            totals[k] = totals.get(k, 0) + v
    merged = merge_streams(streams)
    config = {"sources": args.sources, "peer_as": sorted(args.peer_as or []), "start": args.start,
              "end": args.end, "family": args.family, "sort": args.sort}
    _write(args.out, write_text_log(merged), "ingest", config, args.sources)
    return {"records": len(merged), "counters": totals}


def cmd_featurize(args) -> dict:
    records = merge_streams([load_records(p)[0] for p in args.inputs])
    labels = EventLabelSpec.from_json(Path(args.labels).read_text()) if args.labels \
        else EventLabelSpec()
    series = bin_updates(records, labels, args.rare_threshold, args.flap_mode, args.max_prefixes)
    config = {"inputs": args.inputs, "labels": args.labels, "rare_threshold": args.rare_threshold,
              "flap_mode": args.flap_mode, "max_prefixes": args.max_prefixes}
    inputs = list(args.inputs) + ([args.labels] if args.labels else [])
    _write(args.out, series_to_csv(series), "featurize", config, inputs)
    return {"bins": len(series)}


def cmd_augment(args) -> dict:
    series = read_feature_csv(args.input)
    aug = augment_series(series, StlConfig(period=args.period), args.components)
    config = {"input": args.input, "period": args.period, "components": list(args.components)}
    _write(args.out, series_to_csv(aug), "augment", config, [args.input])
    return {"rows": len(aug), "channels": aug.values.shape[1]}


def cmd_window(args) -> dict:
    series = read_feature_csv(args.input, names=None)
    windows, stats = slice_windows(series.values, series.labels, args.window,
                                   norm="fit" if args.normalize else None, names=series.names)
    buf = io.BytesIO()
    arrays = dict(x=windows.x, y=windows.y, starts=windows.starts,
                  names=np.array(series.names, dtype=str))
    if stats is not None:
        arrays.update(norm_lo=stats.lo, norm_hi=stats.hi)
    np.savez(buf, **arrays)
    atomic_write_bytes(args.out, buf.getvalue())
    write_manifest(args.out, "window", {"input": args.input, "window": args.window,
                                        "normalize": args.normalize}, [args.input])
    return {"windows": len(windows)}


def _train_and_save(cfg: ExperimentConfig, series):
    result = run_experiment(series, cfg)
    extra = {"experiment": cfg.to_dict(), "normalizer": {"lo": result.stats.lo.tolist(),
                                                         "hi": result.stats.hi.tolist()},
             "best_epoch": result.training.best_epoch}
    return result, extra


def _write_log(path: str, history: list[dict], config: dict, inputs) -> None:
    _write(path, rows_to_csv(history), "train-log", config, inputs)


def cmd_train(args) -> dict:
    cfg = _experiment_config(args)
    result, extra = _train_and_save(cfg, _read_series(args.inputs))
    save_checkpoint(result.params, args.out, extra)
    write_manifest(args.out, "train", cfg.to_dict(), args.inputs)
    if args.log:
        _write_log(args.log, result.training.log, cfg.to_dict(), args.inputs)
    return {"best_epoch": result.training.best_epoch, "val_f1": max(
        h["val_f1"] for h in result.training.log)}


def _load_model(path: str):
    params, extra = load_checkpoint(path)
    if "experiment" not in extra or "normalizer" not in extra:
        raise ValueError(f"{path} lacks the experiment block written by `train`")
    cfg = ExperimentConfig.from_dict(extra["experiment"])
    stats = NormalizerStats(np.asarray(extra["normalizer"]["lo"]),
                            np.asarray(extra["normalizer"]["hi"]))
    return params, cfg, stats


def _selected_windows(series, cfg: ExperimentConfig, subset: str):
    tr, va, te = split_targets(series, cfg)
    if subset == "all":
        return WindowSet.concat([tr, va, te])
    return {"train": tr, "val": va, "test": te}[subset]


def cmd_evaluate(args) -> dict:
    params, cfg, stats = _load_model(args.model)
    windows = _selected_windows(_read_series(args.inputs), cfg, args.subset).normalized(stats)
    _, report = evaluate(params, windows, cfg.hash, cfg.train.seed)
    text = canonical_json(report.to_dict())
    if args.out:
        _write(args.out, text, "evaluate", {"model": args.model, "subset": args.subset,
                                            "experiment": cfg.to_dict()},
               [args.model, *args.inputs])
    else:
        sys.stdout.write(text)
    return {"f1": report.f1}


def cmd_pipeline(args) -> dict:
    cfg = _experiment_config(args)
    result, extra = _train_and_save(cfg, _read_series(args.inputs))
    text = canonical_json(result.report.to_dict())
    if args.out:
        _write(args.out, text, "pipeline", cfg.to_dict(), args.inputs)
    else:
        sys.stdout.write(text)
    if args.model:
        save_checkpoint(result.params, args.model, extra)
        write_manifest(args.model, "pipeline", cfg.to_dict(), args.inputs)
    if args.log:
        _write_log(args.log, result.training.log, cfg.to_dict(), args.inputs)
    return {"f1": result.report.f1}


def _parse_arms(text: str) -> list[tuple[str, ...]]:
    if text == "all":
        return all_arm_sets()
    out = []
    for item in text.split(","):
        item = item.strip()
        arms = () if item in ("", "none") else tuple(a for a in item.split("+"))
        bad = set(arms) - set(ARMS)
        if bad:
            raise argparse.ArgumentTypeError(f"unknown arm(s) {sorted(bad)}; choose from {ARMS}")
        out.append(arms)
    return out


def cmd_ablate(args) -> dict:
    cfg = _experiment_config(args)
    rows = ablate(_read_series(args.inputs), args.arms, cfg, args.jobs)
    _write(args.out, rows_to_csv(rows), "ablate",
           {"experiment": cfg.to_dict(), "arms": ["+".join(a) for a in args.arms]}, args.inputs)
    return {"rows": len(rows)}


def cmd_sweep(args) -> dict:
    cfg = _experiment_config(args)
    rows = sweep(_read_series(args.inputs), args.windows, args.periods, cfg, args.jobs)
    _write(args.out, rows_to_csv(rows), "sweep",
           {"experiment": cfg.to_dict(), "windows": args.windows, "periods": args.periods},
           args.inputs)
    return {"cells": len(rows)}


def cmd_multiclass(args) -> dict:
    cfg = _experiment_config(args)
    result = multiclass_run(_read_series(args.inputs), cfg, args.samples, args.inputs)
    config = {"experiment": cfg.to_dict(), "samples": args.samples}
    _write(args.out, canonical_json(result.report.to_dict()), "multiclass", config, args.inputs)
    if args.confusion:
        m = result.confusion.matrix
        lines = ["true\\pred," + ",".join(str(c) for c in range(m.shape[1]))]
        lines += [f"{r}," + ",".join(str(v) for v in row) for r, row in enumerate(m)]
        _write(args.confusion, "\n".join(lines) + "\n", "multiclass-confusion", config,
               args.inputs)
    return {"f1": result.report.f1}


def cmd_holdout(args) -> dict:
    cfg = _experiment_config(args)
    series = _read_series(args.inputs)
    if args.held_out == 0:
        rows = holdout_all(series, cfg, args.samples, args.jobs)
    else:
        r = holdout_event_run(series, args.held_out - 1, cfg, args.samples)
        rows = [{"held_out": args.held_out, "accuracy": r.report.accuracy,
                 "precision": r.report.precision, "recall": r.report.recall, "f1": r.report.f1}]
    _write(args.out, rows_to_csv(rows), "holdout",
           {"experiment": cfg.to_dict(), "held_out": args.held_out, "samples": args.samples},
           args.inputs)
    return {"folds": len(rows)}


def cmd_synth(args) -> dict:
    names = [e for e in args.events.split(",") if e]
    unknown = [e for e in names if e not in SIGNATURES]
    if not names or unknown:
        raise ValueError(f"unknown event signature(s) {unknown}; choose from {sorted(SIGNATURES)}")
    # events spread evenly, each covering `fraction` of the timeline
    width = max(1, int(round(args.n * args.fraction)))
    slot = args.n // len(names)
    if width > slot:
        raise ValueError(f"{len(names)} events of width {width} do not fit in n={args.n}")
    events = [SynthEvent.named(name, i + 1, i * slot + (slot - width) // 2,
                               i * slot + (slot - width) // 2 + width)
              for i, name in enumerate(names)]
    series = synth_events(events, args.n, args.seed, args.period, start_ts=args.start)
    config = {"events": names, "n": args.n, "fraction": args.fraction, "seed": args.seed,
              "period": args.period, "start": args.start}
    _write(args.out, series_to_csv(series), "synth", config)
    return {"rows": args.n}


def cmd_attention(args) -> dict:
    params, cfg, stats = _load_model(args.model)
    windows = _selected_windows(_read_series(args.inputs), cfg, args.subset).normalized(stats)
    graphs = export_attention_graph(params, windows, args.feature_threshold,
                                    args.temporal_threshold)
    config = {"model": args.model, "subset": args.subset,
              "feature_threshold": args.feature_threshold,
              "temporal_threshold": args.temporal_threshold}
    for view, edges in graphs.items():
        _write(f"{args.out_prefix}.{view}.csv", edges_to_csv(edges), "attention", config,
               [args.model, *args.inputs])
    return {view: len(e) for view, e in graphs.items()}


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgpgat", description="BGP anomaly detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="MRT or text update dumps -> text record log")
    p.add_argument("--from", dest="sources", nargs="+", required=True)
    p.add_argument("--peer-as", type=_int_list, default=None)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--end", type=int, default=2**32)
    p.add_argument("--family", type=int, choices=(4, 6), default=None)
    p.add_argument("--sort", action="store_true", help="sort each file by timestamp first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="records -> per-minute feature CSV")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--labels", default=None, help="event label spec JSON")
    p.add_argument("--rare-threshold", type=int, default=5)
    p.add_argument("--flap-mode", choices=("duplicate", "reannounce"), default="duplicate")
    p.add_argument("--max-prefixes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("augment", help="feature CSV -> STL-expanded CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--period", type=int, default=35)
    p.add_argument("--components", type=lambda s: tuple(s.split(",")), default=COMPONENTS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("window", help="(augmented) CSV -> windows .npz")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--normalize", action="store_true", help="min-max fit on the whole input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_window)

    p = sub.add_parser("train", help="feature CSV(s) -> checkpoint")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="per-epoch training log CSV")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="checkpoint + feature CSV(s) -> report JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--subset", choices=("test", "val", "train", "all"), default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="feature CSV(s) -> trained model and test report")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", default=None, help="report JSON (stdout when omitted)")
    p.add_argument("--model", default=None, help="also write the checkpoint here")
    p.add_argument("--log", default=None)
    _add_experiment_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ablate", help="module ablation table")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--arms", type=_parse_arms, default=_parse_arms("all"),
                   help="comma-separated arm sets joined by '+', e.g. "
                        "'stl+window,window,none', or 'all'")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_experiment_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="accuracy grid over window sizes and periods")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--windows", type=_int_list, default=[1, 5, 10, 15, 20, 25, 30])
    p.add_argument("--periods", type=_int_list, default=[25, 35])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_experiment_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("multiclass", help="normal + one class per event file")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--samples", type=int, default=600)
    p.add_argument("--out", required=True)
    p.add_argument("--confusion", default=None, help="confusion matrix CSV")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_multiclass)

    p = sub.add_parser("holdout", help="train on all events but one, test on it")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--held-out", type=int, default=0,
                   help="1-based event file index; 0 runs every fold")
    p.add_argument("--samples", type=int, default=600)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_experiment_args(p)
    p.set_defaults(func=cmd_holdout)

    p = sub.add_parser("synth", help="synthetic labelled feature CSV")
    p.add_argument("--events", required=True,
                   help=f"comma-separated signatures from {sorted(SIGNATURES)}")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--fraction", type=float, default=0.1, help="share of rows per event")
    p.add_argument("--period", type=int, default=35)
    p.add_argument("--start", type=int, default=0, help="first timestamp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("attention", help="thresholded attention edge lists")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--subset", choices=("test", "val", "train", "all"), default="test")
    p.add_argument("--feature-threshold", type=float, default=0.3)
    p.add_argument("--temporal-threshold", type=float, default=0.2)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_attention)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except Exception as exc:
        print(f"bgpgat {args.command}: error: {exc}", file=sys.stderr)
        log.debug("stage failure", exc_info=True)
        return 1
    log.info("%s done: %s", args.command, json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
