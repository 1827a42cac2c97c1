"""Static SVG figures. Every figure writes a sibling CSV carrying the exact
plotted numbers."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ._util import write_csv


def _finish(fig, svg_path):
    svg_path = Path(svg_path)
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_irf_grid(irf_set, svg_path, title: str | None = None) -> None:
    """Small-multiple grid of median responses with 68% bands."""
    variables = irf_set.variables
    h = np.arange(irf_set.horizons + 1)
    ncols = 3
    nrows = (len(variables) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.2 * nrows), sharex=True)
    axes = np.atleast_1d(axes).ravel()
    for i, v in enumerate(variables):
        ax = axes[i]
        ax.fill_between(h, irf_set.lo68[i], irf_set.hi68[i], alpha=0.3, color="tab:blue", lw=0)
        ax.plot(h, irf_set.median[i], color="tab:blue", lw=1.2)
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_title(v, fontsize=9)
    for ax in axes[len(variables):]:
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    _finish(fig, svg_path)
    write_csv(Path(svg_path).with_suffix(".csv"), ["variable", "horizon", "lo68", "median", "hi68"], irf_set.to_rows())


def plot_trajectories(runs: dict, svg_path, metrics=None, title: str | None = None) -> None:
    """Percentage-change paths per metric, one panel per metric, line per shock."""
    from .microsim import TRAJECTORY_METRICS, trajectories_to_rows

    metrics = metrics or TRAJECTORY_METRICS
    fig, axes = plt.subplots(2, 3, figsize=(10.5, 5.5), sharex=True)
    axes = axes.ravel()
    for i, m in enumerate(metrics):
        ax = axes[i]
        for shock in sorted(runs):
            v = runs[shock].pct_change[m]
            ax.plot(np.arange(1, len(v) + 1), v, label=shock, lw=1.2)
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_title(m, fontsize=9)
    for ax in axes[len(metrics):]:
        ax.axis("off")
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    _finish(fig, svg_path)
    write_csv(Path(svg_path).with_suffix(".csv"), ["shock", "metric", "horizon", "pct_change"], trajectories_to_rows(runs))


def plot_dependence_posterior(dep, svg_path, title: str | None = None) -> None:
    """Histogram of resampled functional draws with median and 68% interval."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.hist(dep.resampled, bins=60, color="tab:blue", alpha=0.6, density=True)
    ax.axvline(dep.median, color="black", lw=1.4)
    ax.axvline(dep.lo68, color="black", lw=1.0, ls="--")
    ax.axvline(dep.hi68, color="black", lw=1.0, ls="--")
    ax.set_xlabel(dep.tag)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _finish(fig, svg_path)
    write_csv(
        Path(svg_path).with_suffix(".csv"),
        ["draw"],
        [[v] for v in dep.resampled],
    )


def plot_regression_heatmap(results: dict, svg_path, title: str | None = None) -> None:
    """Signed-coefficient heat map: green positive, blue negative, flags overlaid."""
    targets = sorted(results)
    features = sorted({f for cells in results.values() for f in cells})
    grid = np.zeros((len(features), len(targets)))
    flags = [["" for _ in targets] for _ in features]
    for j, t in enumerate(targets):
        for i, f in enumerate(features):
            cell = results[t].get(f)
            if cell is None:
                continue
            grid[i, j] = cell.coefficient
            flags[i][j] = cell.flag
    from matplotlib.colors import LinearSegmentedColormap

    cmap = LinearSegmentedColormap.from_list("bg", ["#2166ac", "#ffffff", "#1a9850"])
    fig, ax = plt.subplots(figsize=(1.1 * len(targets) + 4.0, 0.32 * len(features) + 1.5))
    vmax = max(np.abs(grid).max(), 1e-9)
    im = ax.imshow(grid, cmap=cmap, vmin=-vmax, vmax=vmax, aspect="auto")
    ax.set_xticks(range(len(targets)), targets, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(features)), features, fontsize=8)
    for i in range(len(features)):
        for j in range(len(targets)):
            if flags[i][j]:
                ax.text(j, i, flags[i][j], ha="center", va="center", fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.7)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _finish(fig, svg_path)
    rows = []
    for i, f in enumerate(features):
        for j, t in enumerate(targets):
            rows.append((f, t, grid[i, j], flags[i][j]))
    write_csv(Path(svg_path).with_suffix(".csv"), ["feature", "target", "coefficient", "flag"], rows)
