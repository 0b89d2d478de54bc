"""Matplotlib renderings written next to every delimited report.

Each report path gets a PNG sibling: loss curves for the metrics CSV, a
per-class IoU bar chart for the eval report, grouped bars for ablation
tables, and a source/target/synthesized panel for stylization.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = ["#0072B2", "#E69F00", "#009E73", "#CC79A7", "#56B4E9", "#D55E00"]

plt.rcParams.update({
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.35,
    "grid.linewidth": 0.5,
    "axes.prop_cycle": plt.cycler("color", _COLORS),
    "savefig.dpi": 130,
    "font.size": 9,
})


def _finish(fig, out_png: Path | str) -> None:
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def training_curves(metrics: list[tuple[int, float, float, float]],
                    out_png: Path | str,
                    pretrain: list[tuple[int, float, float, float]] | None = None) -> None:
    """Loss curves on a log scale; pretraining, when present, plots dashed."""
    fig, ax = plt.subplots()
    if metrics:
        iters = [r[0] for r in metrics]
        ax.plot(iters, [r[1] for r in metrics], label="segmentation loss")
        ax.plot(iters, [r[2] for r in metrics], label="generation loss")
        ax.plot(iters, [r[3] for r in metrics], label="total loss")
    if pretrain:
        ax.plot([r[0] for r in pretrain], [r[2] for r in pretrain],
                linestyle="--", label="generation loss (pretraining)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    _finish(fig, out_png)


def iou_report(per_class: list[float], mean_iou: float, out_png: Path | str,
               class_names: tuple[str, ...] | None = None) -> None:
    fig, ax = plt.subplots()
    n = len(per_class)
    xs = np.arange(n)
    heights = [0.0 if math.isnan(v) else v for v in per_class]
    bars = ax.bar(xs, heights, color=_COLORS[0])
    for c, v in enumerate(per_class):
        if math.isnan(v):
            bars[c].set_hatch("//")
            bars[c].set_facecolor("none")
    labels = class_names if class_names and len(class_names) == n else [
        f"class {c}" for c in range(n)]
    ax.set_xticks(xs, labels, rotation=20)
    ax.axhline(mean_iou, color=_COLORS[1], linestyle="--",
               label=f"mIoU = {mean_iou:.3f}")
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    _finish(fig, out_png)


def ablation_chart(rows, out_png: Path | str) -> None:
    """Per-seed dots and a mean bar per setting; rows as in evaluate.ablate."""
    settings: list[str] = []
    means: dict[str, float] = {}
    points: dict[str, list[float]] = {}
    for row in rows:
        if row.setting not in settings:
            settings.append(row.setting)
            points[row.setting] = []
        if row.seed == "mean":
            means[row.setting] = row.mean_iou
        else:
            points[row.setting].append(row.mean_iou)
    fig, ax = plt.subplots()
    xs = np.arange(len(settings))
    ax.bar(xs, [means.get(s, 0.0) for s in settings], width=0.6,
           color=_COLORS[0], alpha=0.7, label="mean")
    for i, s in enumerate(settings):
        ys = points[s]
        ax.plot([i] * len(ys), ys, "o", color=_COLORS[3], markersize=4)
    ax.set_xticks(xs, settings, rotation=20)
    ax.set_ylabel("mIoU")
    ax.legend()
    _finish(fig, out_png)


def stylize_panel(source: np.ndarray, target: np.ndarray, synthesized: np.ndarray,
                  out_png: Path | str) -> None:
    """Side-by-side (3, h, w) images; the synthesized one is clamped for display."""
    fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.8))
    for ax, img, title in zip(axes, (source, target, synthesized),
                              ("source", "target", "synthesized")):
        ax.imshow(np.clip(img, 0.0, 1.0).transpose(1, 2, 0))
        ax.set_title(title)
        ax.axis("off")
        ax.grid(False)
    _finish(fig, out_png)
