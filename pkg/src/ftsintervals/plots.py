"""Static SVG figures: rainbow plots of curve series and forecast bands.

matplotlib is an optional dependency (``pip install ftsintervals[plot]``);
it is imported lazily so the rest of the package works without it.
"""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    # fixed ids/metadata so reruns write identical files
    matplotlib.rcParams["svg.hashsalt"] = "ftsintervals"
    matplotlib.rcParams["svg.fonttype"] = "none"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def rainbow_plot(series, path, title=None):
    """One line per year, coloured from red (first year) to violet (last)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    colours = plt.cm.rainbow(np.linspace(0, 1, series.n_years))
    ages = series.grid.ages
    for row, c in zip(series.values, colours):
        ax.plot(ages, row, color=c, lw=0.8)
    ax.set_xlabel("Age")
    ax.set_ylabel("Life-table death count")
    ax.set_title(title or f"{series.sex} {series.years[0]}-{series.years[-1]}")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def band_plot(ages, actual, point, bands, path, title=""):
    """Actual curve, point forecast and one shaded band per ``(label, IntervalBand)``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (label, band), alpha in zip(bands, np.linspace(0.35, 0.15, max(len(bands), 1))):
        ax.fill_between(ages, band.lower, band.upper, alpha=alpha, label=label, lw=0)
    ax.plot(ages, actual, "k.", ms=2.5, label="observed")
    ax.plot(ages, point, "b-", lw=1, label="forecast")
    ax.set_xlabel("Age")
    ax.set_ylabel("Life-table death count")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
