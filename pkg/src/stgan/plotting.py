"""Report figures (PNG). Uses the Agg backend so no display is needed."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import metrics  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def figsize(scale=1.0, ratio=None):
    width = 6.4 * scale
    ratio = ratio or (np.sqrt(5.0) - 1.0) / 2.0
    return (width, width * ratio)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no software/date stamp so reruns give identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trace(trace, path, title=""):
    """L1 distance and Jaccard index against training epochs."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(1.2, 0.4))
        if trace.records:
            epochs = trace.column("minibatch") / trace.batches_per_epoch
            a1.plot(epochs, trace.column("l1"), lw=0.8)
            a2.plot(epochs, trace.column("jaccard"), lw=0.8, color="C1")
        a1.set(xlabel="epoch", ylabel="L1 distance", ylim=(0, 2))
        a2.set(xlabel="epoch", ylabel="Jaccard index", ylim=(0, 1))
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_marginal_trace(mtrace, path, ticks_per_epoch=1.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        x = np.asarray(mtrace.ticks, dtype=float) / ticks_per_epoch
        ax.plot(x, mtrace.f1_ds1, marker=".", lw=0.8, label="DS1")
        ax.plot(x, mtrace.f1_ds2, marker=".", lw=0.8, label="DS2")
        ax.set(xlabel="epoch", ylabel="macro-F1", ylim=(0.4, 1.0), title=f"label {mtrace.label}")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_f1_histograms(summaries: dict, path, threshold=0.5, bins=20):
    """Overlaid macro-F1 histograms of joint runs, one per named summary."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        edges = np.linspace(0.4, 1.0, bins + 1)
        for name, s in summaries.items():
            m = s.f1_matrix()
            if m.size:
                ax.hist(m[:, list(s.thresholds).index(threshold)], bins=edges, alpha=0.6, label=name)
        ax.set(xlabel=f"macro-F1 (threshold {threshold})", ylabel="runs")
        if summaries:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_flattened(flat: np.ndarray, path):
    """Real and synthetic counts of occupied cubes in flattened sorted order."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        if len(flat):
            ax.plot(flat[:, 0], flat[:, 1], lw=0.8, label="real")
            ax.plot(flat[:, 0], flat[:, 2], lw=0.6, alpha=0.8, label="synthetic")
            ax.set_yscale("symlog")
            ax.legend(frameon=False)
        ax.set(xlabel="cube (sorted)", ylabel="count")
        fig.tight_layout()
        return _save(fig, path)


def plot_marginals(real, synthetic, path, names=None, bins=40):
    """Per-feature histograms with KDE overlays for a real and a synthetic sample."""
    real = np.atleast_2d(np.asarray(real, dtype=float))
    syn = np.atleast_2d(np.asarray(synthetic, dtype=float))
    d = real.shape[1]
    names = names or [f"x{j + 1}" for j in range(d)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, d, figsize=figsize(1.4, 0.3), squeeze=False)
        for j, ax in enumerate(axes[0]):
            lo = min(real[:, j].min(), syn[:, j].min())
            hi = max(real[:, j].max(), syn[:, j].max())
            edges = np.linspace(lo, hi if hi > lo else lo + 1, bins + 1)
            for col, label, c in ((real[:, j], "real", "C0"), (syn[:, j], "synthetic", "C1")):
                ax.hist(col, bins=edges, density=True, alpha=0.4, color=c, label=label)
                if np.std(col) > 0:
                    k = metrics.kde_series(col, grid_points=256)
                    ax.plot(k[:, 0], k[:, 1], lw=0.8, color=c)
            ax.set_title(names[j])
        axes[0][0].legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
