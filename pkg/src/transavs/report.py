"""Figure rendering for run artifacts: loss curves, metric distributions,
and side-by-side clip panels. All figures go straight to files via the
Agg backend; nothing opens a window.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss(loss_csv, out_png) -> Path:
    """Total and per-component training curves from a loss CSV."""
    with open(loss_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{loss_csv} has no data rows")
    iters = np.array([int(r["iter"]) for r in rows])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(iters, [float(r["loss"]) for r in rows], color="black", lw=1.2)
    ax1.set_title("total loss")
    ax1.set_xlabel("iteration")
    for key, color in (("aqdl", "tab:blue"), ("aqml", "tab:orange"),
                       ("class", "tab:green"), ("dice", "tab:red")):
        ax2.plot(iters, [float(r[key]) for r in rows], label=key, color=color, lw=1.0)
    ax2.set_title("components")
    ax2.set_xlabel("iteration")
    ax2.legend(fontsize=8)
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    out = Path(out_png)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def plot_metrics(metrics_csv, out_png) -> Path:
    """Histograms of per-frame J and F with their means marked."""
    with open(metrics_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{metrics_csv} has no data rows")
    j = np.array([float(r["J"]) for r in rows])
    f = np.array([float(r["F"]) for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, vals, name in ((axes[0], j, "J"), (axes[1], f, "F")):
        ax.hist(vals, bins=20, range=(0, 1), color="tab:blue", alpha=0.8)
        ax.axvline(vals.mean(), color="black", ls="--",
                   label=f"mean {vals.mean():.3f}")
        ax.set_title(f"per-frame {name}")
        ax.legend(fontsize=8)
    out = Path(out_png)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def clip_panel(frames: np.ndarray, gt_masks: np.ndarray,
               pred_masks: np.ndarray, out_png) -> Path:
    """Rows: frames, ground truth, predictions; one column per frame."""
    t = frames.shape[0]
    fig, axes = plt.subplots(3, t, figsize=(2.2 * t, 6.6))
    if t == 1:
        axes = axes[:, None]
    for i in range(t):
        axes[0, i].imshow(frames[i].transpose(1, 2, 0))
        axes[1, i].imshow(gt_masks[i], cmap="gray", vmin=0, vmax=1)
        axes[2, i].imshow(pred_masks[i], cmap="gray", vmin=0, vmax=1)
        for r in range(3):
            axes[r, i].set_xticks([])
            axes[r, i].set_yticks([])
        axes[0, i].set_title(f"frame {i}", fontsize=9)
    axes[0, 0].set_ylabel("input", fontsize=9)
    axes[1, 0].set_ylabel("truth", fontsize=9)
    axes[2, 0].set_ylabel("predicted", fontsize=9)
    out = Path(out_png)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out
