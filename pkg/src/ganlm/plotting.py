"""Figures written next to the CSV reports (PNG, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_accuracy_curves(curves: Mapping[int, Sequence[tuple[int, float]]], model: str, path) -> Path:
    """Test accuracy vs epoch, one line per labeled-set size."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for n_labeled in sorted(curves):
            pts = curves[n_labeled]
            ax.plot([e for e, _ in pts], [a for _, a in pts], marker="o", ms=3, label=f"{n_labeled} labeled")
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.02)
        ax.set_title(model)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_results(rows: Sequence[dict], path, title: str | None = None) -> Path:
    """Accuracy (and F1 where defined) vs labeled-set size, per model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        models = list(dict.fromkeys(r["model"] for r in rows))
        for m in models:
            sub = sorted((r for r in rows if r["model"] == m), key=lambda r: r["n_labeled"])
            xs = [r["n_labeled"] for r in sub]
            line, = ax.plot(xs, [r["accuracy"] for r in sub], marker="o", ms=3, label=f"{m} accuracy")
            f1 = [(x, r["f1"]) for x, r in zip(xs, sub) if r["f1"] is not None]
            if f1:
                ax.plot([x for x, _ in f1], [v for _, v in f1], ls="--", color=line.get_color(), label=f"{m} F1")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("labeled samples")
        ax.set_ylabel("score")
        ax.set_ylim(0.0, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        return _save(fig, path)
