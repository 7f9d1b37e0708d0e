"""Deterministic figure emission from metrics CSVs.

Images carry fixed metadata and no wall-clock state, so identical inputs
render byte-identical files.
"""

from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError

_SAVE_KW = dict(dpi=110, metadata={"Software": "wbm"})


def read_metrics_csv(path: str) -> dict[str, np.ndarray]:
    """Parse a metrics CSV into {column: float array}.

    Malformed rows raise ConfigError naming the 1-based line number.
    """
    if not os.path.exists(path):
        raise ConfigError(f"metrics file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}:1: empty file, expected a header row")
        cols: list[list[float]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            for j, cell in enumerate(row):
                try:
                    cols[j].append(float(cell) if cell != "" else math.nan)
                except ValueError:
                    raise ConfigError(
                        f"{path}:{lineno}: column {header[j]!r}: "
                        f"not a number: {cell!r}") from None
    return {name: np.asarray(vals) for name, vals in zip(header, cols)}


def _finish(fig, out_path: str) -> None:
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_reward_curves(csv_paths, labels, out_path: str,
                       column: str = "mean_reward", x: str = "update") -> None:
    """Overlay one reward curve per CSV; empty inputs yield empty axes."""
    if len(csv_paths) != len(labels):
        raise ConfigError("need one label per metrics file")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew = False
    for path, label in zip(csv_paths, labels):
        data = read_metrics_csv(path)
        if column not in data or not data[column].size:
            continue
        ys = data[column]
        xs = next((data[k] for k in (x, "update", "step")
                   if k in data and data[k].size == ys.size),
                  np.arange(ys.size))
        ax.plot(xs, ys, label=label, linewidth=1.4)
        drew = True
    ax.set_xlabel(x)
    ax.set_ylabel(column)
    ax.set_title("training reward")
    if drew:
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center",
                transform=ax.transAxes, color="0.5")
    fig.tight_layout()
    _finish(fig, out_path)


def plot_component_breakdown(csv_path: str, out_path: str,
                             x: str = "update") -> None:
    """One curve per reward component column found in the CSV."""
    data = read_metrics_csv(csv_path)
    skip = {x, "mean_reward", "clip_fraction", "kl", "success_rate",
            "step", "loss"}
    comps = [k for k in data if k not in skip]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = data.get(x, None)
    drew = False
    for name in comps:
        ys = data[name]
        if ys.size and not np.all(np.isnan(ys)):
            ax.plot(xs if xs is not None and xs.size == ys.size
                    else np.arange(ys.size), ys, label=name, linewidth=1.2)
            drew = True
    ax.set_xlabel(x)
    ax.set_ylabel("mean per-step value")
    ax.set_title("reward components")
    if drew:
        ax.legend(fontsize=7, ncols=2)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center",
                transform=ax.transAxes, color="0.5")
    fig.tight_layout()
    _finish(fig, out_path)


def plot_success_table(csv_path: str, out_path: str) -> None:
    """Bar chart of per-object success rates from an eval-sweep CSV."""
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{csv_path}:1: empty file, expected a header row")
        rows = [row for row in reader if row]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if rows:
        try:
            names = [f"{r[0]} {r[1]} {r[2]}kg" for r in rows]
            rates = [float(r[header.index("success_rate")]) for r in rows]
        except (IndexError, ValueError) as e:
            raise ConfigError(f"{csv_path}: malformed sweep row: {e}") from e
        ax.bar(range(len(rates)), rates, color="#4878a8")
        ax.set_xticks(range(len(rates)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.set_ylim(0.0, 1.05)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center",
                transform=ax.transAxes, color="0.5")
    ax.set_ylabel("success rate")
    ax.set_title("evaluation sweep")
    fig.tight_layout()
    _finish(fig, out_path)
