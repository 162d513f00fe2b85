"""Figures written next to the delimited reports.

SVG output is byte-stable across runs: fixed hash salt, no date metadata.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DETECTED = "#ff8c00"
OTHER = "#87ceeb"

STYLE = {
    "svg.hashsalt": "soundmix",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.8,
    "figure.dpi": 100,
}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    meta = {"Date": None} if fmt == "svg" else None
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)


def plot_class_probabilities(names, probs, threshold, path, title="Predicted classes"):
    """Log-scale probability bars; detected classes orange, threshold dashed."""
    probs = np.asarray(probs, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(names)), 3.6))
        colors = [DETECTED if p >= threshold else OTHER for p in probs]
        ax.bar(np.arange(len(names)), probs, color=colors, edgecolor="black", linewidth=0.4)
        ax.set_yscale("log")
        lo = max(min(float(probs.min()) / 2, threshold / 10), 1e-12)
        ax.set_ylim(lo, 1.5)
        ax.axhline(threshold, color="black", linestyle="--", linewidth=1.0, label=f"threshold {threshold:g}")
        ax.set_xticks(np.arange(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylabel("probability (log scale)")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_report(report, class_names, path):
    """Grouped per-class precision / recall / F1 bars."""
    p = [c.precision for c in report.per_class]
    r = [c.recall for c in report.per_class]
    f = [c.f1 for c in report.per_class]
    x = np.arange(len(p))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.5 * len(p)), 3.4))
        ax.bar(x - 0.27, p, 0.27, label="P", color="#3498db")
        ax.bar(x, r, 0.27, label="R", color="#95a5a6")
        ax.bar(x + 0.27, f, 0.27, label="F1", color="#e74c3c")
        ax.set_xticks(x)
        ax.set_xticklabels(class_names, rotation=45, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"accuracy {report.elementwise_accuracy:.2f}%  macro-F1 {report.macro_f1:.3f}")
        ax.legend(ncol=3, frameon=False, loc="lower right")
        _save(fig, path)


def plot_history(history, path):
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        ax.plot(epochs, [h["train_loss"] for h in history], label="train")
        ax.plot(epochs, [h["val_loss"] for h in history], label="validation")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("BCE loss")
        ax.legend(frameon=False)
        _save(fig, path)
