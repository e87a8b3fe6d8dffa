"""Command-line entry point.

Subcommands::

    tactfl run               one experiment, artifacts under --out
    tactfl ablate            the four ablation modes on a shared split
    tactfl sweep             one run per value of a single parameter
    tactfl partition-inspect dump the client/server/test split manifest

Precedence of settings: built-in defaults < --config file < --set key=value
< the dedicated --seed / --workers flags.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from collections import Counter

from . import __version__
from . import config as config_mod
from .exceptions import TactflError
from .federation import build_dataset, build_split, run_experiment

logger = logging.getLogger("tactfl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SWEEPABLE = ("window_fraction", "r_l", "r_m", "alpha", "tau")
ABLATION_MODES = ("ssfl_only", "tct_only", "full", "supervised")


class UsageError(Exception):
    """Bad command line or configuration; maps to exit code 2."""


def resolve_config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        if args.config:
            return config_mod.load(args.config, overrides)
        return config_mod.loads("", overrides)
    except TactflError as exc:
        raise UsageError(str(exc)) from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute(cfg, out_dir):
    """Run one experiment and write its artifacts; returns the summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    samples = build_dataset(cfg)
    split = build_split(cfg, samples)
    fingerprint = split.fingerprint()
    paths = {
        name: os.path.join(out_dir, name)
        for name in ("metrics.jsonl", "timing.csv", "summary.json", "config.resolved.ini",
                     "run_manifest.json", "split_manifest.csv")
    }
    with open(paths["config.resolved.ini"], "w", encoding="utf-8") as fh:
        fh.write(config_mod.dumps(cfg))
    with open(paths["split_manifest.csv"], "w", encoding="utf-8") as fh:
        fh.write(split.manifest())
    manifest = {
        "config": config_mod.dumps(cfg),
        "version": __version__,
        "fingerprint": fingerprint,
        "paths": paths,
    }
    _write_json(paths["run_manifest.json"], manifest)

    with open(paths["metrics.jsonl"], "w", encoding="utf-8") as metrics, \
            open(paths["timing.csv"], "w", encoding="utf-8", newline="") as timing:
        writer = csv.writer(timing)
        writer.writerow(["round", "ms"])

        def log_round(record, state):
            metrics.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
            metrics.flush()
            writer.writerow([record.round, f"{record.ms:.3f}"])
            logger.info("round %d acc %.2f f1 %.2f", record.round, record.accuracy, record.f1)

        records = run_experiment(cfg, samples, split, on_round=log_round)

    last = records[-1]
    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "rounds": len(records),
        "final_accuracy": last.accuracy,
        "final_f1": last.f1,
        "best_accuracy": max(r.accuracy for r in records),
        "fingerprint": fingerprint,
    }
    _write_json(paths["summary.json"], summary)
    return summary


def _write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _print_table(header, rows, out=None):
    out = out or sys.stdout
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip(), file=out)


def _parse_seeds(text):
    if text is None:
        return None
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def cmd_run(args):
    cfg = resolve_config(args)
    summary = execute(cfg, args.out)
    print(f"final accuracy {summary['final_accuracy']:.2f}  macro-F1 {summary['final_f1']:.2f}  "
          f"-> {args.out}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = resolve_config(args)
    seeds = _parse_seeds(args.seeds) or [cfg.seed]
    rows = []
    for mode in ABLATION_MODES:
        accs, f1s, prints = [], [], set()
        for seed in seeds:
            sub = os.path.join(args.out, mode) if len(seeds) == 1 else os.path.join(args.out, mode, f"seed{seed}")
            summary = execute(cfg.replace(mode=mode, seed=seed), sub)
            accs.append(summary["final_accuracy"])
            f1s.append(summary["final_f1"])
            prints.add(summary["fingerprint"])
        rows.append([mode, f"{statistics.median(accs):.2f}", f"{statistics.median(f1s):.2f}",
                     " ".join(f"{a:.2f}" for a in accs), ";".join(sorted(prints))])
    header = ["mode", "accuracy", "f1", "per_seed_accuracy", "fingerprint"]
    _write_table(os.path.join(args.out, "ablation.csv"), header, rows)
    _print_table(header[:4], [r[:4] for r in rows])
    return EXIT_OK


def cmd_sweep(args):
    if args.param not in SWEEPABLE:
        raise UsageError(f"cannot sweep {args.param!r}; choose from {', '.join(SWEEPABLE)}")
    raw = [v for v in (args.values or "").split(",") if v.strip()]
    if not raw:
        raise UsageError("sweep needs at least one value")
    cfg = resolve_config(args)
    try:
        configs = [cfg.replace(**{args.param: config_mod.coerce(args.param, v)}).validate() for v in raw]
    except TactflError as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for run_cfg in configs:
        value = getattr(run_cfg, args.param)
        summary = execute(run_cfg, os.path.join(args.out, f"{args.param}={value}"))
        rows.append([value, f"{summary['final_accuracy']:.2f}", f"{summary['final_f1']:.2f}"])
    header = [args.param, "accuracy", "f1"]
    _write_table(os.path.join(args.out, "sweep.csv"), header, rows)
    _print_table(header, rows)
    return EXIT_OK


def cmd_partition_inspect(args):
    cfg = resolve_config(args)
    samples = build_dataset(cfg)
    split = build_split(cfg, samples)
    labels = {s.sample_id: s.label for s in samples}
    header = ["shard", "size", "classes", "modalities"]
    rows = []
    for c in split.clients:
        hist = Counter(labels[s.sample_id] for s in c.samples)
        mods = ";".join(f"{m}={int(p)}" for m, p in sorted(c.modality_present.items()))
        rows.append([f"client:{c.client_id}", len(c), dict(sorted(hist.items())), mods])
    rows.append(["server", len(split.server_labelled), dict(sorted(Counter(s.label for s in split.server_labelled).items())), ""])
    rows.append(["test", len(split.test), dict(sorted(Counter(s.label for s in split.test).items())), ""])
    _print_table(header, rows)
    print(f"fingerprint {split.fingerprint()}")
    if args.out:
        parent = os.path.dirname(args.out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(split.manifest())
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults apply when omitted)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value; repeatable, wins over the file")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("--workers", type=int, help="client worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log every round")

    parser = argparse.ArgumentParser(prog="tactfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.add_argument("--out", default="runs/run", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[common], help="compare the four ablation modes")
    p.add_argument("--out", default="runs/ablate", help="output directory")
    p.add_argument("--seeds", help="comma-separated seeds; table reports medians")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default="runs/sweep", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("partition-inspect", parents=[common], help="show the data split")
    p.add_argument("--out", help="also write the split manifest to this file")
    p.set_defaults(func=cmd_partition_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tactfl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        logger.debug("run failed", exc_info=True)
        print(f"tactfl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
