"""Static SVG figures.

Figures are written with a fixed ``svg.hashsalt`` and no date metadata so
that re-rendering the same data gives byte-identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "rdslab", "svg.fonttype": "path", "figure.dpi": 100,
       "font.size": 9, "axes.titlesize": 9}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def density_heatmap(cells, path, title="density"):
    """Heatmap of a density on the unit torus grid (rows index x, columns y)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(np.asarray(cells).T, origin="lower", extent=(0, 1, 0, 1),
                       cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
        return _save(fig, path)


def leaf_overlay(groups, path, box=None, title="leaves"):
    """Overlay of leaf curves.

    ``groups`` maps a label to a list of ``(x, y)`` array pairs; each group
    gets one colour.  ``box`` draws the square ``[-box, box]^2``.
    """
    colors = ["tab:blue", "tab:red", "tab:green", "tab:orange", "tab:purple", "tab:gray"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 4.2))
        for i, (label, curves) in enumerate(groups.items()):
            c = colors[i % len(colors)]
            for j, (x, y) in enumerate(curves):
                ax.plot(x, y, color=c, lw=0.7, alpha=0.8, label=label if j == 0 else None)
        if box is not None:
            ax.plot([-box, box, box, -box, -box], [-box, -box, box, box, -box], "k--", lw=0.6)
        ax.set_xlabel("u")
        ax.set_ylabel("cs")
        ax.set_title(title)
        if groups:
            ax.legend(loc="upper right", fontsize=7)
        return _save(fig, path)


def histogram_panels(panels, path, title="conditional densities"):
    """One panel per entry of ``panels``: ``(label, edges, empirical, predicted)``.

    Empirical and predicted values are probabilities per bin; both are drawn
    as densities.
    """
    n = max(len(panels), 1)
    cols = min(n, 4)
    rows = (n + cols - 1) // cols
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.2 * rows), squeeze=False)
        for ax in axes.ravel()[len(panels):]:
            ax.axis("off")
        for ax, (label, edges, emp, pred) in zip(axes.ravel(), panels):
            edges = np.asarray(edges)
            w = np.diff(edges)
            ax.stairs(np.asarray(emp) / w, edges, color="tab:blue", label="empirical")
            ax.stairs(np.asarray(pred) / w, edges, color="tab:red", label="predicted")
            ax.set_title(label)
        axes.ravel()[0].legend(fontsize=6)
        fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def trace_plot(x, ys, path, xlabel="n", ylabel="value", title="", logy=False):
    """Line plot of one or more series ``ys`` (label -> values) against ``x``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.2))
        for label, y in ys.items():
            ax.plot(x, y, marker="o", ms=3, lw=1, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(ys) > 1:
            ax.legend(fontsize=7)
        return _save(fig, path)
