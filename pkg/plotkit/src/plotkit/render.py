"""Rendering of the three figure families.

structure  - decision heatmap over a 2-D slice of the state space
sweep      - one line per policy with a confidence band
evolution  - running means (and backlog, when present) over time

Output bytes depend only on the input CSV bytes and the recipe: the usual
volatile image metadata is pinned so re-rendering reproduces the file.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from plotkit.recipes import FigureRecipe, PlotError

_SAVEFIG_KW = {"dpi": 130, "metadata": {"Software": "plotkit"}}


def read_csv_columns(path: str) -> Dict[str, List[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotError(f"{path}: empty CSV") from None
        rows = list(reader)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    columns = {name: [] for name in header}
    for row in rows:
        for name, value in zip(header, row):
            columns[name].append(value)
    return columns


def require(columns: Dict[str, List[str]], path: str, *names: str) -> None:
    for name in names:
        if name not in columns:
            raise PlotError(f"{path}: missing column {name!r}")


def render(recipe: FigureRecipe) -> str:
    """Render the recipe; returns the output path.

    Raises PlotError (naming the offending file/column) before anything
    is written, so a failed render leaves no partial image behind.
    """
    if recipe.family == "structure":
        fig = _render_structure(recipe)
    elif recipe.family == "sweep":
        fig = _render_sweep(recipe)
    else:
        fig = _render_evolution(recipe)
    out = Path(recipe.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVEFIG_KW)
    plt.close(fig)
    return str(out)


def _render_structure(recipe: FigureRecipe):
    path = recipe.inputs[0]
    columns = read_csv_columns(path)
    axes_names = [n for n in columns if n not in ("alpha", "beta")]
    if len(axes_names) != 2:
        raise PlotError(f"{path}: structure CSV needs two coordinate columns")
    value_column = recipe.value_column or ("beta" if axes_names[0].startswith("y") else "alpha")
    require(columns, path, value_column, *axes_names)
    xs = np.array([int(v) for v in columns[axes_names[0]]])
    ys = np.array([int(v) for v in columns[axes_names[1]]])
    vals = np.array([int(v) for v in columns[value_column]])
    grid = np.full((xs.max() + 1, ys.max() + 1), -1, dtype=int)
    grid[xs, ys] = vals
    n_choices = int(vals.max()) + 1

    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    cmap = plt.get_cmap("viridis", max(n_choices, 2))
    im = ax.imshow(
        grid.T, origin="lower", cmap=cmap, vmin=-0.5, vmax=max(n_choices, 2) - 0.5,
        interpolation="nearest",
    )
    for (i, j), v in np.ndenumerate(grid):
        if v >= 0:
            ax.text(i, j, str(v), ha="center", va="center", fontsize=7,
                    color="white" if v < n_choices / 2 else "black")
    cbar = fig.colorbar(im, ax=ax, ticks=range(n_choices))
    cbar.set_label(f"{value_column} decision (0 = idle)")
    ax.set_xlabel(recipe.xlabel or axes_names[0])
    ax.set_ylabel(recipe.ylabel or axes_names[1])
    ax.set_title(recipe.title or f"{value_column} decision map")
    fig.tight_layout()
    return fig


def _render_sweep(recipe: FigureRecipe):
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    for path in recipe.inputs:
        columns = read_csv_columns(path)
        require(columns, path, "sweep_value", "policy", "mean", "ci_low", "ci_high")
        has_source = "source" in columns
        values = np.array([float(v) for v in columns["sweep_value"]])
        means = np.array([float(v) for v in columns["mean"]])
        lows = np.array([float(v) for v in columns["ci_low"]])
        highs = np.array([float(v) for v in columns["ci_high"]])
        if has_source:
            keys = [f"{p}/source{s}" for p, s in zip(columns["policy"], columns["source"])]
        else:
            keys = list(columns["policy"])
        for key in sorted(set(keys)):
            mask = np.array([k == key for k in keys])
            order = np.argsort(values[mask])
            xs = values[mask][order]
            ax.plot(xs, means[mask][order], marker="o", label=key)
            ax.fill_between(xs, lows[mask][order], highs[mask][order], alpha=0.2)
    ax.set_xlabel(recipe.xlabel or "sweep value")
    ax.set_ylabel(recipe.ylabel or "weighted average age")
    if recipe.log_y:
        ax.set_yscale("log")
    if recipe.title:
        ax.set_title(recipe.title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def _render_evolution(recipe: FigureRecipe):
    series = []
    for path in recipe.inputs:
        columns = read_csv_columns(path)
        require(columns, path, "slot")
        series.append((Path(path).stem, columns))
    value_names: List[str] = []
    for _, columns in series:
        for name in columns:
            if name != "slot" and name not in value_names:
                value_names.append(name)
    if not value_names:
        raise PlotError(f"{recipe.inputs[0]}: no value columns besides slot")

    fig, axes = plt.subplots(
        len(value_names), 1, figsize=(5.8, 2.1 * len(value_names)), sharex=True,
        squeeze=False,
    )
    for k, name in enumerate(value_names):
        ax = axes[k][0]
        for label, columns in series:
            if name not in columns:
                continue
            slots = np.array([int(v) for v in columns["slot"]])
            vals = np.array([float(v) for v in columns[name]])
            ax.plot(slots, vals, label=label if len(series) > 1 else None)
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
        if len(series) > 1:
            ax.legend(fontsize=7)
    axes[-1][0].set_xlabel(recipe.xlabel or "slot")
    if recipe.title:
        axes[0][0].set_title(recipe.title)
    fig.tight_layout()
    return fig
