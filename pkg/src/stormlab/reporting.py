"""Figure rendering for the harness report paths.

All figures are written to files (Agg backend); nothing ever opens a window.
The CSV/JSON outputs stay the primary artifacts and the figures are derived
views of the same data.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_grad_norm_curves(curves: dict, title: str, path: str) -> str:
    """Log-log true-gradient-norm curves, one line per labelled series.

    ``curves`` maps label -> (t_values, norm_values).
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, (ts, norms) in sorted(curves.items()):
        ts = np.asarray(ts, dtype=float)
        norms = np.asarray(norms, dtype=float)
        keep = norms > 0
        ax.loglog(ts[keep], norms[keep], label=label, linewidth=1.2)
    ax.set_xlabel("iterate t")
    ax.set_ylabel(r"$\|\nabla F(x_t)\|$")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_sweep_fit(ts, means, stds, slope: float, intercept: float, r2: float,
                   title: str, path: str) -> str:
    """Log-log scatter of mean output gradient norms with the fitted power law."""
    ts = np.asarray(ts, dtype=float)
    means = np.asarray(means, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.errorbar(ts, means, yerr=np.asarray(stds, dtype=float), fmt="o",
                capsize=3, label="mean over seeds")
    grid = np.geomspace(ts.min(), ts.max(), 64)
    ax.plot(grid, np.exp(intercept) * grid ** slope, "--",
            label=f"fit slope {slope:.3f} (r$^2$={r2:.3f})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel(r"mean $\|\nabla F(x_{out})\|$")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)
