"""Static SVG renderings of COI traces and eigenvalue scatters.

Matplotlib is imported lazily with the Agg backend; SVG ids and metadata
are pinned so repeated runs write identical files.
"""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "tsvis"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)


def coi_svg(path, series: dict, nominal_freq: float = 60.0, band: float | None = None) -> None:
    """``series`` maps a legend label to ``(t, coi_pu)``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for label, (t, coi) in series.items():
        ax.plot(t, (np.asarray(coi) - 1.0) * nominal_freq, lw=1.0, label=label)
    if band is not None:
        for s in (-1, 1):
            ax.axhline(s * band * nominal_freq, color="0.6", lw=0.6, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("COI frequency deviation [Hz]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def eigen_svg(path, ev) -> None:
    plt = _pyplot()
    ev = np.asarray(ev)
    fig, ax = plt.subplots(figsize=(4.8, 4.0))
    ax.scatter(ev.real, ev.imag, s=10, marker="x")
    ax.axvline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel("real part [1/s]")
    ax.set_ylabel("imaginary part [rad/s]")
    fig.tight_layout()
    _save(fig, path)
