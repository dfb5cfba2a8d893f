"""Figures for run reports. Each plot is written next to the TSV that holds its data."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}
# PNG metadata carries the matplotlib version by default; drop it so reruns give identical files
_PNG_META = {"Software": None}


def write_tsv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
    return path


def history_rows(history: list[dict], metric: str):
    for rec in history:
        yield rec["epoch"], rec["train_loss"], rec["valid"][metric], int(rec["improved"])


def plot_history(history: list[dict], metric: str, path, title: str = "") -> Path:
    """Training loss and validation ``metric`` against epoch, on twin axes."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, [r["train_loss"] for r in history], color="tab:blue", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss", color="tab:blue")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r["valid"][metric] for r in history], color="tab:orange", marker=".", label=f"valid {metric}")
        ax2.set_ylabel(f"valid {metric}", color="tab:orange")
        ax2.grid(False)
        best = [r["epoch"] for r in history if r["improved"]]
        if best:
            ax.axvline(best[-1], color="grey", lw=0.8, ls="--")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
    return Path(path)


def plot_bars(labels, values, path, ylabel: str, errors=None, title: str = "") -> Path:
    """One bar per label, optional symmetric error bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = range(len(labels))
        ax.bar(x, values, yerr=errors, color="tab:blue", alpha=0.8, capsize=3)
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels)
        ax.set_ylabel(ylabel)
        ax.grid(axis="x", visible=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
    return Path(path)
