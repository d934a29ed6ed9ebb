"""Figures for the command-line report path (written to files, never shown)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lattice import OFFSETS4, Region  # noqa: E402

# keep PNG bytes stable across runs
_META = {"Software": None}

plt.rcParams.update({
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence, beta: float, path, lambda_c: Sequence[float] = (), ylabel: str = "metric",
               n_windows: int = 3) -> Path:
    """Metric against lambda on a log axis, windows I_i shaded, lambda_c marked."""
    from .lab import window

    lam = np.array([r.lam for r in rows])
    y = np.array([r.metric for r in rows])
    lo = np.array([r.err_lo for r in rows])
    hi = np.array([r.err_hi for r in rows])
    fig, ax = plt.subplots()
    ax.errorbar(lam, y, yerr=[np.maximum(y - lo, 0), np.maximum(hi - y, 0)], fmt="o-", ms=3, lw=1, capsize=2)
    for i in range(n_windows):
        a, b = window(i, beta)
        ax.axvspan(a, b, color="C1", alpha=0.12, lw=0)
        ax.text(math.sqrt(a * b), 1.0, f"I{i}", transform=ax.get_xaxis_transform(), ha="center", va="bottom",
                fontsize=7)
    for c in lambda_c:
        ax.axvline(c, color="k", ls="--", lw=0.8)
    if np.all(lam > 0):
        ax.set_xscale("log")
    if np.all(y > 0):
        ax.set_yscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def plot_series(times: np.ndarray, values: np.ndarray, path, ylabel: str = "observable") -> Path:
    """One line per replica."""
    values = np.atleast_2d(values)
    fig, ax = plt.subplots()
    for v in values:
        ax.plot(times, v, lw=0.7, alpha=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def plot_field(phi: np.ndarray, V: Region, path, title: str = "", contours=()) -> Path:
    """Height field as an image, optionally with contour edges drawn on the dual lattice."""
    g = V.grid(np.asarray(phi), fill_value=-1).astype(float)
    g[g < 0] = np.nan
    x0, y0 = V.origin
    h, w = g.shape
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(g, origin="lower", cmap="viridis", interpolation="nearest",
                   extent=(x0 - 0.5, x0 + w - 0.5, y0 - 0.5, y0 + h - 0.5))
    fig.colorbar(im, ax=ax, shrink=0.8, label="height")
    for c in contours:
        col = "w" if c.sign == "up" else "r"
        for (x, y, d) in c.edges:
            dx, dy = OFFSETS4[d]
            mx, my = x + dx / 2, y + dy / 2
            if dx:
                ax.plot([mx, mx], [my - 0.5, my + 0.5], color=col, lw=1.2)
            else:
                ax.plot([mx - 0.5, mx + 0.5], [my, my], color=col, lw=1.2)
    ax.set_title(title)
    ax.set_aspect("equal")
    return _save(fig, path)


def plot_histogram(heights: np.ndarray, fractions: np.ndarray, path) -> Path:
    fig, ax = plt.subplots()
    ax.bar(heights, fractions, width=0.8)
    ax.set_xlabel("height")
    ax.set_ylabel("fraction of sites")
    return _save(fig, path)


def plot_phi_scan(r_values, phis, gap: float, path) -> Path:
    """Bottleneck ratio of A_r against r with the 2 * gap level."""
    r = np.asarray(r_values, dtype=float)
    f = np.array([p if math.isfinite(p) else np.nan for p in phis])
    fig, ax = plt.subplots()
    ax.plot(r, f, "o-", ms=3, label="Phi(A_r)")
    ax.axhline(2 * gap, color="k", ls="--", lw=0.8, label="2 gap")
    ax.set_xlabel("r")
    ax.set_ylabel("bottleneck ratio")
    ax.legend(frameon=False)
    return _save(fig, path)
