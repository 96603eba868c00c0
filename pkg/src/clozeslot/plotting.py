"""Figures for training curves and few-shot fraction curves (rendered off-screen)."""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curve(rows: Sequence[dict], path: str | Path, title: str = "training") -> Path:
    """Loss per step; held-out precision/recall on a second axis when present."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in rows]
    ax.plot(steps, [r["loss"] for r in rows], lw=0.8, color="tab:gray", label="loss")
    if rows and "loss_ema" in rows[0]:
        ax.plot(steps, [r["loss_ema"] for r in rows], lw=1.2, color="black", label="loss (smoothed)")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    evals = [r for r in rows if r.get("eval_precision") not in (None, "")]
    if evals:
        ax2 = ax.twinx()
        ax2.plot([r["step"] for r in evals], [r["eval_precision"] for r in evals], "o-", color="tab:blue",
                 label="held-out precision")
        ax2.plot([r["step"] for r in evals], [r["eval_recall"] for r in evals], "s-", color="tab:orange",
                 label="held-out recall")
        ax2.set_ylim(0, 1)
        ax2.set_ylabel("exact-span P / R")
        ax2.legend(loc="lower right", fontsize=8)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title)
    return _finish(fig, path)


def plot_fraction_curve(rows: Sequence[dict], path: str | Path, title: str = "F1 vs training fraction") -> Path:
    """Macro F1 (and per-slot F1 as thin lines) against the training-set fraction, log x-axis."""
    rows = sorted(rows, key=lambda r: Fraction(r["fraction"]))
    xs = [float(Fraction(r["fraction"])) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    slot_keys = sorted({k for r in rows for k in r if k.startswith("f1_")})
    for key in slot_keys:
        ax.plot(xs, [r.get(key, float("nan")) for r in rows], lw=0.8, alpha=0.6, label=key[3:])
    ax.plot(xs, [r["macro_f1"] for r in rows], "o-", lw=2, color="black", label="macro")
    ax.set_xscale("log", base=2)
    ax.set_xticks(xs)
    ax.set_xticklabels([r["fraction"] for r in rows], fontsize=8)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("fraction of training utterances")
    ax.set_ylabel("span F1")
    ax.legend(fontsize=7, ncol=2)
    ax.set_title(title)
    return _finish(fig, path)
