"""Report figures rendered straight to image files.

Everything uses the Agg backend so rendering works headless.  Each saver
takes the already-computed data, writes one PNG (or whatever the path
extension selects) and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError, ShapeError

_DPI = 120


def _finish(fig, path):
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def save_history_curves(history: list, path):
    """Training loss plus the three validation metrics over epochs."""
    if not history:
        raise DataError("no training history to plot")
    epochs = [row.epoch for row in history]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(epochs, [row.train_loss for row in history],
                 color="tab:red", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")

    ax_val = ax_loss.twinx()
    for attr, label, color in (
            ("val_intent_acc", "intent acc", "tab:blue"),
            ("val_slot_f1", "slot F1", "tab:green"),
            ("val_sem_acc", "semantic acc", "tab:purple")):
        ax_val.plot(epochs, [getattr(row, attr) for row in history],
                    color=color, label=label)
    ax_val.set_ylabel("validation metric")
    ax_val.set_ylim(0.0, 1.05)

    handles_l, labels_l = ax_loss.get_legend_handles_labels()
    handles_v, labels_v = ax_val.get_legend_handles_labels()
    ax_val.legend(handles_l + handles_v, labels_l + labels_v,
                  loc="center right", fontsize=8)
    ax_loss.set_title("training history")
    return _finish(fig, path)


def save_confusion_matrix(matrix, labels: list, path):
    """Intent confusion heatmap; counts are annotated when the map is small."""
    counts = np.asarray(matrix)
    n = len(labels)
    if counts.shape != (n, n):
        raise ShapeError(f"confusion matrix {counts.shape} does not match "
                         f"{n} labels")
    if n == 0:
        raise DataError("no intent labels to plot")
    side = max(4.0, 0.45 * n)
    fig, ax = plt.subplots(figsize=(side + 1.5, side))
    image = ax.imshow(counts, cmap="Blues")
    fig.colorbar(image, ax=ax, fraction=0.046)
    ax.set_xticks(range(n), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(n), labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    ax.set_title("intent confusion")
    if n <= 20:
        cutoff = counts.max() / 2 if counts.max() > 0 else 0
        for i in range(n):
            for j in range(n):
                color = "white" if counts[i, j] > cutoff else "black"
                ax.text(j, i, str(int(counts[i, j])), ha="center",
                        va="center", color=color, fontsize=7)
    return _finish(fig, path)


def save_latency_chart(reports: list, path):
    """Horizontal mean-latency bars, annotated with speedup when present."""
    if not reports:
        raise DataError("no latency reports to plot")
    names = [r.model_name for r in reports]
    means = [r.mean_ms for r in reports]
    fig, ax = plt.subplots(figsize=(7, 0.6 * len(reports) + 1.5))
    pos = range(len(reports))
    ax.barh(pos, means, color="tab:blue")
    ax.set_yticks(pos, names)
    ax.invert_yaxis()
    ax.set_xlabel("mean latency per utterance (ms)")
    ax.set_title("inference latency")
    for y, r in zip(pos, reports):
        note = f"{r.mean_ms:.1f} ms"
        if r.speedup_vs_baseline is not None:
            note += f"  ({r.speedup_vs_baseline:.1f}x)"
        ax.text(r.mean_ms, y, " " + note, va="center", fontsize=8)
    return _finish(fig, path)
