"""PNG figures rendered next to the CSV outputs they are drawn from."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes identical between runs
_META = {"Software": "insiderlog"}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_curve(values: Sequence[float], path, ylabel: str, title: str, log_scale: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(values) + 1)
    ax.plot(epochs, values, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if log_scale:
        ax.set_yscale("log")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_scores(validation: np.ndarray, test: np.ndarray, cutoff: float, path) -> None:
    """Histogram of validation and test MSE scores with the fitted cutoff."""
    fig, ax = plt.subplots(figsize=(6, 4))
    val = validation[~np.isnan(validation)]
    tst = test[~np.isnan(test)]
    top = max([cutoff * 1.5] + [float(a.max()) for a in (val, tst) if len(a)])
    bins = np.linspace(0.0, top, 60)
    if len(val):
        ax.hist(val, bins=bins, alpha=0.6, label="validation (benign)")
    if len(tst):
        ax.hist(tst, bins=bins, alpha=0.6, label="test")
    ax.axvline(cutoff, color="k", ls="--", lw=1, label=f"cutoff {cutoff:.4g}")
    ax.set_yscale("log")
    ax.set_xlabel("MSE")
    ax.set_ylabel("windows")
    ax.legend()
    _save(fig, path)


def plot_confusion(confusion: Mapping[tuple[str, str], int], truth: Sequence[str],
                   predicted: Sequence[str], path) -> None:
    grid = np.array([[confusion[(t, p)] for p in predicted] for t in truth])
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.imshow(np.log1p(grid), cmap="Blues")
    ax.set_xticks(range(len(predicted)), predicted, rotation=30)
    ax.set_yticks(range(len(truth)), truth)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    for i in range(len(truth)):
        for j in range(len(predicted)):
            ax.text(j, i, str(grid[i, j]), ha="center", va="center", fontsize=8)
    _save(fig, path)
