"""SVG figures: dataset scatter, trajectory grids, and accuracy-versus-h charts.

Figures are built with the object-oriented matplotlib API (no pyplot
state) and written as SVG with fixed ids and no timestamp, so the same
inputs give byte-identical files.
"""

from __future__ import annotations

import io
import math

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

TWO_CLASS_COLOURS = ("tab:red", "tab:blue")
PALETTE = ("tab:red", "tab:blue", "tab:green", "tab:orange", "tab:purple",
           "tab:brown", "tab:pink", "tab:gray", "tab:olive", "tab:cyan")
VARIANT_STYLE = {
    "residual": ("tab:blue", "o"),
    "residual+batchnorm": ("tab:orange", "s"),
    "shrinkage": ("tab:green", "^"),
}


def class_colours(n_classes: int):
    if n_classes <= 2:
        return TWO_CLASS_COLOURS[:max(n_classes, 1)]
    return tuple(PALETTE[i % len(PALETTE)] for i in range(n_classes))


def render_svg(fig: Figure) -> str:
    FigureCanvasSVG(fig)
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "eulernet", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _scatter(ax, points, labels, n_classes, gid, size=6.0):
    colours = np.array(class_colours(n_classes), dtype=object)[labels]
    sc = ax.scatter(points[:, 0], points[:, 1], c=list(colours), s=size, linewidths=0)
    sc.set_gid(gid)
    return sc


def dataset_figure(train, test, title: str = "") -> Figure:
    """Side-by-side scatter of a 2-D train and test set, one marker per point."""
    if train.n_features != 2 or test.n_features != 2:
        raise ValueError("dataset scatter needs 2-D features")
    n_classes = max(train.n_classes, test.n_classes)
    fig = Figure(figsize=(8, 3.8))
    for k, (d, name) in enumerate(((train, "train"), (test, "test"))):
        ax = fig.add_subplot(1, 2, k + 1)
        _scatter(ax, d.features, d.labels, n_classes, gid=f"points-{name}")
        ax.set_title(f"{name} ({len(d)} points)")
        ax.set_aspect("equal", adjustable="datalim")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def trajectory_figure(record, fixed_axes: bool = False, title: str = "", n_classes: int | None = None) -> Figure:
    """Grid of 2-D feature snapshots, one panel per recorded layer.

    With ``fixed_axes`` every panel shares the union of all bounds;
    otherwise each panel is fitted to its own snapshot.
    """
    if not record.snapshots:
        raise ValueError("trajectory record is empty")
    if record.snapshots[0].shape[1] != 2:
        raise ValueError("trajectory grids need a feature width of 2")
    n_classes = n_classes or int(record.labels.max()) + 1
    n = len(record.layers)
    cols = 3 if n > 4 else n
    rows = math.ceil(n / cols)
    fig = Figure(figsize=(3.2 * cols, 3.0 * rows))
    bounds = record.bounds
    if fixed_axes:
        lo = np.min([b[0] for b in bounds], axis=0)
        hi = np.max([b[1] for b in bounds], axis=0)
        bounds = [(lo, hi)] * n
    for k, (t, snap) in enumerate(zip(record.layers, record.snapshots)):
        ax = fig.add_subplot(rows, cols, k + 1)
        ax.set_gid(f"panel-layer-{t}")
        _scatter(ax, snap, record.labels, n_classes, gid=f"points-layer-{t}", size=3.0)
        lo, hi = bounds[k]
        pad = np.maximum((hi - lo) * 0.05, 1e-12)
        ax.set_xlim(lo[0] - pad[0], hi[0] + pad[0])
        ax.set_ylim(lo[1] - pad[1], hi[1] + pad[1])
        ax.set_title(f"layer {t}", fontsize=9)
        ax.tick_params(labelsize=7)
    if title:
        fig.suptitle(title + (" (fixed axes)" if fixed_axes else " (scaled axes)"))
    fig.tight_layout()
    return fig


def accuracy_vs_h_figure(report, title: str = "") -> Figure:
    """Mean test accuracy against h with one standard deviation error bars, per variant."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    hs = np.array(report.h_values)
    width = 0.012 * (hs.max() - hs.min() if len(hs) > 1 else 1.0)
    for k, variant in enumerate(report.variants):
        cells = [report.cell(variant, h) for h in hs]
        colour, marker = VARIANT_STYLE.get(variant, (PALETTE[k % len(PALETTE)], "o"))
        offset = (k - (len(report.variants) - 1) / 2) * width
        container = ax.errorbar(hs + offset, [c.mean for c in cells], yerr=[c.std for c in cells],
                                marker=marker, color=colour, capsize=3, linewidth=1.0, label=variant)
        container.lines[0].set_gid(f"series-{variant}")
    ax.set_xlabel("step size h")
    ax.set_ylabel("test accuracy")
    ax.set_xticks(hs)
    ax.legend(loc="lower left", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig
