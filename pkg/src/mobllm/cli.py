"""Command-line entry point: preprocess, synth, train, eval, fewshot, ablate.

Exit codes: 0 success, 1 usage, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

import torch

from .checkins import FEW_SHOT_FRACTIONS, EmptyDatasetError, ParseError, load_dataset, save_dataset
from .checkins.records import DEFAULT_COLUMNS
from .config import ConfigError, RunConfig
from .model import ABLATIONS, TASKS
from .pipeline import (
    DataError,
    RunDirLocked,
    RunSpec,
    dataset_from_raw,
    evaluate_run,
    file_digest,
    run_training,
    synthetic_dataset,
)
from .plotting import plot_bars, write_tsv
from .train import TrainingDivergence

log = logging.getLogger("mobllm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config)


def _fmt_fraction(f: float) -> str:
    return f"{f:.2f}".rstrip("0").rstrip(".") if f < 1 else "1"


def _fraction(text: str) -> float:
    f = float(text)
    if not 0.0 < f <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must be in (0, 1], got {text}")
    return f


def _load_archive(path):
    if not Path(path).exists():
        raise DataError(f"archive not found: {path}")
    try:
        return load_dataset(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from None


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if not Path(args.data).exists():
        raise DataError(f"input file not found: {args.data}")
    columns = tuple(args.columns.split(",")) if args.columns else DEFAULT_COLUMNS
    ds = dataset_from_raw(args.data, cfg, args.seed, columns)
    save_dataset(args.out, ds)
    print(json.dumps(ds.summary(), sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    ds = synthetic_dataset(cfg, args.seed)
    save_dataset(args.out, ds)
    if args.raw:
        from .checkins import sequences_to_raw
        rows = sequences_to_raw(ds.sequences, ds.vocab)
        write_tsv(args.raw, ["user", "timestamp", "lat", "lon", "poi", "category"],
                  ([r.user_key, r.timestamp, repr(r.lat), repr(r.lon), r.poi_key, r.category_text] for r in rows))
    print(json.dumps(ds.summary(), sort_keys=True))
    return EXIT_OK


def _train_one(ds, digest, cfg, task, seed, ablations, fraction, out) -> dict:
    spec = RunSpec(task, seed, tuple(sorted(set(ablations))), fraction)
    report, result = run_training(ds, spec, cfg, out, digest)
    log.info("%s: best epoch %d of %d", out, result.best_epoch, len(result.history))
    return report.metrics


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load_archive(args.data)
    seed = cfg["train.seed"] if args.seed is None else args.seed
    spec = RunSpec(args.task, seed, tuple(sorted(set(args.ablate))), args.fraction)
    report, _ = run_training(ds, spec, cfg, args.out, file_digest(args.data))
    print(report.table())
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = _load_archive(args.data)
    run = Path(args.run)
    report = evaluate_run(run, ds, args.split)
    if args.task and args.task != report.task:
        raise DataError(f"run {run} was trained for {report.task!r}, not {args.task!r}")
    (run / f"eval_{args.split}.json").write_text(report.to_json() + "\n")
    print(report.table())
    return EXIT_OK


def _headline(task: str) -> str:
    return "mae" if task == "tp" else "mrr"


def cmd_fewshot(args) -> int:
    cfg = _config(args)
    ds = _load_archive(args.data)
    digest = file_digest(args.data)
    seed = cfg["train.seed"] if args.seed is None else args.seed
    fractions = args.fraction or list(FEW_SHOT_FRACTIONS)
    out = Path(args.out)
    rows = []
    for f in fractions:
        metrics = _train_one(ds, digest, cfg, args.task, seed, args.ablate, f, out / f"frac_{_fmt_fraction(f)}")
        rows.append((f, *[metrics[k] for k in sorted(metrics)]))
        print(f"fraction {f}: " + "  ".join(f"{k}={metrics[k]:.4f}" for k in sorted(metrics)))
    names = sorted(metrics)
    write_tsv(out / "fewshot.tsv", ["fraction", *names], rows)
    key = names.index(_headline(args.task)) + 1
    plot_bars([f"{100 * r[0]:g}%" for r in rows], [r[key] for r in rows], out / "fewshot.png",
              ylabel=f"test {_headline(args.task)}", title=f"{args.task.upper()} few-shot")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = _load_archive(args.data)
    digest = file_digest(args.data)
    seeds = args.seed or [cfg["train.seed"]]
    variants = ["full", *(args.ablate or ABLATIONS)]
    out = Path(args.out)
    metric = _headline(args.task)
    rows, by_variant = [], {}
    for v in variants:
        for s in seeds:
            flags = () if v == "full" else (v,)
            m = _train_one(ds, digest, cfg, args.task, s, flags, args.fraction, out / f"{v}_s{s}")
            rows.append((v, s, m[metric]))
            by_variant.setdefault(v, []).append(m[metric])
            print(f"{v:8s} seed {s}: test {metric}={m[metric]:.4f}")
    write_tsv(out / "ablation.tsv", ["variant", "seed", f"test_{metric}"], rows)
    means = [statistics.fmean(by_variant[v]) for v in variants]
    errs = [statistics.pstdev(by_variant[v]) for v in variants]
    plot_bars(variants, means, out / "ablation.png", ylabel=f"test {metric}", errors=errs,
              title=f"{args.task.upper()} ablation")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mobllm", description="Mobility prediction pipeline on check-in data.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, out=True):
        if data:
            sp.add_argument("--data", required=True, help="raw check-ins (preprocess) or dataset archive")
        if out:
            sp.add_argument("--out", required=True)
        sp.add_argument("--config", help="flat key=value config file")

    sp = sub.add_parser("preprocess", help="raw check-ins -> dataset archive")
    common(sp)
    sp.add_argument("--seed", type=int, help="split seed (default: data.seed)")
    sp.add_argument("--columns", help="comma-separated column order, e.g. user,timestamp,lat,lon,poi,category")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("synth", help="write the synthetic corpus as a dataset archive")
    common(sp, data=False)
    sp.add_argument("--seed", type=int, help="split seed (default: data.seed)")
    sp.add_argument("--raw", help="also write the corpus as a raw check-in TSV")
    sp.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train one model"),
                                 ("fewshot", cmd_fewshot, "train on training-set prefixes"),
                                 ("ablate", cmd_ablate, "full model vs. ablations over seeds")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--task", required=True, choices=TASKS)
        sp.add_argument("--ablate", action="append", default=[], choices=ABLATIONS)
        if name == "ablate":
            sp.add_argument("--seed", type=int, action="append", help="repeatable")
            sp.add_argument("--fraction", type=_fraction)
        elif name == "fewshot":
            sp.add_argument("--seed", type=int)
            sp.add_argument("--fraction", type=_fraction, action="append",
                            help="repeatable (default: 0.01, 0.05, 0.20)")
        else:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--fraction", type=_fraction, help="train on this prefix fraction of the training split")
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="evaluate a trained run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--task", choices=TASKS, help="assert the run's task")
    sp.add_argument("--split", default="test", choices=("train", "valid", "test"))
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)  # bitwise-reproducible reductions
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyDatasetError:
        print("error: empty dataset", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ParseError, RunDirLocked, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
