"""Figure rendering for the reporting paths (training, evaluation, comparison).

Every CLI command that writes delimited output also drops a PNG next to
it; all plotting goes through the Agg backend so the pipeline stays
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(entries, path: str):
    """Validation L1 and running G/D losses against images seen."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    xs = [e.images_seen for e in entries]
    ax1.plot(xs, [e.val_l1 for e in entries], marker="o", label="val L1")
    saved = [(e.images_seen, e.val_l1) for e in entries if e.saved]
    if saved:
        ax1.scatter([s[0] for s in saved], [s[1] for s in saved],
                    color="tab:red", zorder=3, label="checkpoint kept")
    ax1.set_xlabel("images seen")
    ax1.set_ylabel("validation L1")
    ax1.legend()
    ax2.plot(xs, [e.gen_loss for e in entries], label="generator")
    ax2.plot(xs, [e.disc_loss for e in entries], label="discriminator")
    ax2.set_xlabel("images seen")
    ax2.set_ylabel("training loss")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_figure(records, summary, path: str):
    """Histograms of the per-image metrics with their aggregate stats."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    specs = [("iou", summary.iou_mean, summary.iou_std),
             ("fp_rate", summary.fp_mean, summary.fp_std),
             ("fn_rate", summary.fn_mean, summary.fn_std)]
    for ax, (name, mean, std) in zip(axes, specs):
        vals = [getattr(r, name) for r in records]
        ax.hist(vals, bins=20, range=(0, 1), color="tab:blue", alpha=0.8)
        ax.axvline(mean, color="tab:red")
        ax.set_title(f"{name}: {mean:.3f} +/- {std:.3f} (n={summary.n})")
        ax.set_xlabel(name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_comparison_figure(rows, path: str):
    """Grouped bars of the two means per metric, annotated with p-values."""
    fig, ax = plt.subplots(figsize=(7, 4))
    metrics = [r[0] for r in rows]
    xs = np.arange(len(metrics))
    width = 0.35
    ax.bar(xs - width / 2, [r[1] for r in rows], width, label="A")
    ax.bar(xs + width / 2, [r[2] for r in rows], width, label="B")
    for x, row in zip(xs, rows):
        top = max(row[1], row[2])
        ax.text(x, top + 0.02, f"p={row[5]:.3g}", ha="center", fontsize=9)
    ax.set_xticks(xs)
    ax.set_xticklabels(metrics)
    ax.set_ylabel("mean")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_montage(samples, preds, path: str, max_rows: int = 4):
    """Rows of (RGB, flow input if present, truth, prediction) images."""
    from .segnet import split_input

    n = min(max_rows, len(samples))
    if n == 0:
        return
    has_flow = samples[0][1].shape[2] == 6
    cols = 4 if has_flow else 3
    fig, axes = plt.subplots(n, cols, figsize=(2.4 * cols, 2.4 * n), squeeze=False)
    for i in range(n):
        sid, inp, gt = samples[i]
        rgb, flow = split_input(np.ascontiguousarray(inp.transpose(2, 0, 1)))
        panels = [("rgb", rgb), ("flow", flow)] if has_flow else [("rgb", rgb)]
        panels += [("truth", gt), ("pred", preds[i])]
        for j, (label, img) in enumerate(panels):
            ax = axes[i][j]
            if img.ndim == 2:
                ax.imshow(img, cmap="gray", vmin=0, vmax=1)
            else:
                ax.imshow(np.clip(img, 0, 1))
            ax.set_title(f"{sid} {label}", fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
