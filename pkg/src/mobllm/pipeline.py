"""Dataset building and run-directory management shared by the CLI and tests."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import torch

from .checkins import (
    Dataset,
    few_shot_subset,
    generate_synthetic,
    parse_checkin_file,
    preprocess,
    split_dataset,
)
from .checkins.records import DEFAULT_COLUMNS
from .config import RunConfig, parse_config_text
from .metrics import MetricReport
from .model import MobilityModel
from .plotting import history_rows, plot_history, write_tsv
from .train import (
    Examples,
    TrainResult,
    build_model,
    evaluate,
    make_examples,
    train,
)

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"


class DataError(RuntimeError):
    """Input data cannot support the requested operation (exit code 2)."""


class RunDirLocked(RuntimeError):
    pass


# -- datasets ---------------------------------------------------------------

def dataset_from_raw(path, cfg: RunConfig, seed: int | None = None, columns=DEFAULT_COLUMNS) -> Dataset:
    parsed = parse_checkin_file(path, columns)
    for line, msg in parsed.errors[:20]:
        logger.warning("%s:%d: %s", path, line, msg)
    if parsed.errors:
        logger.warning("%d malformed row(s) skipped", len(parsed.errors))
    sequences, vocab = preprocess(parsed.records, cfg.preprocess_config())
    seed = cfg["data.seed"] if seed is None else seed
    try:
        split = split_dataset(sequences, seed, cfg.split_ratio())
    except ValueError as exc:
        raise DataError(str(exc)) from None
    meta = {"source": Path(path).name, "seed": seed, "skipped_rows": len(parsed.errors)}
    return Dataset(sequences, vocab, split, meta)


def synthetic_dataset(cfg: RunConfig, seed: int | None = None) -> Dataset:
    spec = cfg.synthetic_spec()
    sequences, vocab = generate_synthetic(spec)
    seed = cfg["data.seed"] if seed is None else seed
    split = split_dataset(sequences, seed, cfg.split_ratio())
    meta = {"source": "synthetic", "synthetic_seed": spec.seed, "seed": seed}
    return Dataset(sequences, vocab, split, meta)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def check_task(dataset: Dataset, task: str):
    if task == "tul" and dataset.vocab.n_users < 2:
        raise DataError("TUL needs at least two users in the archive")
    if not dataset.split.train or not dataset.split.valid:
        raise DataError("archive has an empty train or validation split")
    if task in ("lp", "tp") and any(len(dataset.sequences[i]) < 2 for i in dataset.split.train):
        raise DataError(f"{task} needs sequences with at least two records")


# -- run directories --------------------------------------------------------

@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ownership of ``run_dir`` for the duration of the block."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunDirLocked(f"{run_dir} is locked by another process (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)


@dataclass
class RunSpec:
    task: str
    seed: int
    ablations: tuple[str, ...] = ()
    fraction: float | None = None

    def to_dict(self) -> dict:
        return {"task": self.task, "seed": self.seed, "ablations": list(self.ablations), "fraction": self.fraction}


def _report_meta(spec: RunSpec, cfg: RunConfig, result: TrainResult, data_digest: str) -> dict:
    return {
        "config_hash": cfg.hash(),
        "seed": spec.seed,
        "ablations": list(spec.ablations),
        "fraction": spec.fraction,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "data": data_digest,
    }


def run_training(dataset: Dataset, spec: RunSpec, cfg: RunConfig, run_dir, data_digest: str = "",
                 on_epoch=None) -> tuple[MetricReport, TrainResult]:
    """Train one model and write the run directory.

    Contents: ``config.txt`` (resolved flat config under a commented run
    header), ``run.json`` (task, seed,
    ablations, fraction, config hash), ``params.pt`` (best state),
    ``history.jsonl`` and ``history.tsv``, ``learning_curve.png``, and the
    test-split ``report.json`` / ``report.txt``.
    """
    run_dir = Path(run_dir)
    check_task(dataset, spec.task)
    split = dataset.split
    if spec.fraction is not None:
        split = few_shot_subset(split, spec.fraction)
    train_ex = make_examples(dataset.sequences, split.train, spec.task)
    valid_ex = make_examples(dataset.sequences, split.valid, spec.task)
    test_ex = make_examples(dataset.sequences, split.test, spec.task) if split.test else None

    with run_lock(run_dir):
        header = "".join(f"# {k}={v}\n" for k, v in (
            ("task", spec.task), ("seed", spec.seed), ("ablate", ",".join(spec.ablations)),
            ("fraction", spec.fraction), ("config_hash", cfg.hash())))
        (run_dir / "config.txt").write_text(header + cfg.dumps(), encoding="utf-8")
        run_info = {**spec.to_dict(), "config_hash": cfg.hash(), "data": data_digest}
        (run_dir / "run.json").write_text(json.dumps(run_info, sort_keys=True, indent=2) + "\n")

        model = build_model(dataset.vocab, spec.task, cfg.model_config(), spec.seed, spec.ablations)
        tcfg = cfg.train_config(spec.task, spec.ablations, spec.seed)
        with (run_dir / "history.jsonl").open("w", encoding="utf-8") as hist:
            def log_epoch(rec):
                hist.write(json.dumps(rec, sort_keys=True) + "\n")
                hist.flush()
                return on_epoch(rec) if on_epoch is not None else False

            result = train(model, train_ex, valid_ex, tcfg, on_epoch=log_epoch)

        torch.save(model.state_dict(), run_dir / "params.pt")
        metric = "mae" if spec.task == "tp" else "mrr"
        write_tsv(run_dir / "history.tsv", ["epoch", "train_loss", f"valid_{metric}", "improved"],
                  history_rows(result.history, metric))
        plot_history(result.history, metric, run_dir / "learning_curve.png", title=spec.task.upper())

        meta = _report_meta(spec, cfg, result, data_digest)
        valid = MetricReport(spec.task, "valid", result.best_valid, meta)
        (run_dir / "valid_report.json").write_text(valid.to_json() + "\n")
        report = MetricReport(spec.task, "test", evaluate(model, test_ex) if test_ex else {}, meta)
        (run_dir / "report.json").write_text(report.to_json() + "\n")
        (run_dir / "report.txt").write_text(report.table() + "\n")
    return report, result


def load_run(run_dir, dataset: Dataset) -> tuple[MobilityModel, RunSpec, RunConfig]:
    run_dir = Path(run_dir)
    for need in ("run.json", "config.txt", "params.pt"):
        if not (run_dir / need).exists():
            raise FileNotFoundError(f"{run_dir}: missing {need}")
    info = json.loads((run_dir / "run.json").read_text())
    spec = RunSpec(info["task"], info["seed"], tuple(info["ablations"]), info["fraction"])
    cfg = RunConfig(parse_config_text((run_dir / "config.txt").read_text()))
    model = build_model(dataset.vocab, spec.task, cfg.model_config(), spec.seed, spec.ablations)
    state = torch.load(run_dir / "params.pt", map_location="cpu", weights_only=True)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise DataError(f"parameters do not fit this archive: {exc}") from None
    return model, spec, cfg


def evaluate_run(run_dir, dataset: Dataset, split: str = "test") -> MetricReport:
    model, spec, cfg = load_run(run_dir, dataset)
    indices = getattr(dataset.split, split)
    if not indices:
        raise DataError(f"archive has an empty {split} split")
    ex: Examples = make_examples(dataset.sequences, indices, spec.task)
    meta = {"config_hash": cfg.hash(), "seed": spec.seed, "ablations": list(spec.ablations),
            "fraction": spec.fraction}
    return MetricReport(spec.task, split, evaluate(model, ex), meta)

