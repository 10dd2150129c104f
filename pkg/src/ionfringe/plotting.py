"""Figure rendering for the report outputs. Files only; no interactive backends."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, ax, path, xlabel, ylabel, title=None, legend=True):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if legend and ax.get_legend_handles_labels()[0]:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_pattern(u, curves: dict, path, scan=None, title=None, ylabel="intensity"):
    """Model curves over tip voltage, optionally with measured points and error bars."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if scan is not None:
        ax.errorbar(scan.u_tip, scan.rate, yerr=scan.stderr, fmt="o", ms=3, color="tab:red",
                    label="data")
    for label, y in curves.items():
        ax.plot(u, y, lw=1, label=label)
    _finish(fig, ax, path, "tip voltage (V)", ylabel, title)


def plot_series(x, series: dict, path, xlabel, ylabel, title=None, sqrt_y=False, styles=None):
    """One line per series; ``styles`` maps labels to matplotlib format strings."""
    styles = styles or {}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        y = np.asarray(y, dtype=float)
        ax.plot(x, np.sqrt(y) if sqrt_y else y, styles.get(label, "o-"), label=label)
    if sqrt_y:
        ticks = ax.get_yticks()
        ax.set_yticks(ticks)
        ax.set_yticklabels([f"{t * t:g}" for t in ticks])
    _finish(fig, ax, path, xlabel, ylabel, title)


def plot_visibility(n_ions, v_extremal, v_model, path, corridor=(0.34, 0.53)):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.axhspan(*corridor, color="0.9")
    ax.plot(n_ions, v_extremal, "^", color="tab:green", label="extremal points")
    ax.plot(n_ions, v_model, "s", color="tab:blue", label="fitted model")
    ax.set_ylim(0, 1)
    _finish(fig, ax, path, "ion number", "visibility")
