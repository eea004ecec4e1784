"""PNG figures for evaluation reports."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .coherence import CorrelationArray  # noqa: E402
from .io import atomic_write_bytes  # noqa: E402


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_bland_altman(pairs, ba, path) -> None:
    """Difference vs mean scatter with bias and limits of agreement."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    mean = arr.mean(axis=1)
    diff = arr[:, 0] - arr[:, 1]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(mean, diff, s=18)
    if ba is not None:
        for y, style in ((ba.mu, "-"), (ba.loa_low, "--"), (ba.loa_high, "--")):
            ax.axhline(y, color="k", linestyle=style, linewidth=1)
    ax.set_xlabel("mean of prediction and reference peak GLS (%)")
    ax.set_ylabel("prediction - reference (%)")
    ax.set_title("Bland-Altman")
    fig.tight_layout()
    _save(fig, path)


def plot_correlation_curves(target: CorrelationArray, achieved: CorrelationArray, path) -> None:
    """Centerline correlation curves of the target and the simulation."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, corr, title in ((axes[0], target, "target"), (axes[1], achieved, "simulated")):
        v = corr.values
        r = v.shape[2]
        cl = v[:, :, r // 2] if r % 2 else 0.5 * (v[:, :, r // 2 - 1] + v[:, :, r // 2])
        t = np.arange(corr.shape[0])
        for k in range(cl.shape[1]):
            ax.plot(t, cl[:, k], color=plt.cm.viridis(k / max(cl.shape[1] - 1, 1)), linewidth=0.8)
        ax.axvline(corr.es_index, color="k", linestyle=":", linewidth=1)
        ax.set_xlabel("frame")
        ax.set_title(title)
    axes[0].set_ylabel("correlation with ES")
    axes[0].set_ylim(0, 1.05)
    fig.tight_layout()
    _save(fig, path)
