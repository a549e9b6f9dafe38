"""SVG figures with byte-stable output (fixed hash salt, no date metadata)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "ringbumps", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def heatmap(times: np.ndarray, positions: np.ndarray, values: np.ndarray, path,
            title: str = "", cmap: str = "viridis") -> Path:
    """Voltage map with time on the x-axis and position on the y-axis.

    ``values`` has shape (len(times), len(positions)).
    """
    fig, ax = plt.subplots(figsize=(8, 3.5))
    mesh = ax.pcolormesh(times, positions, np.asarray(values).T, shading="nearest", cmap=cmap,
                         rasterized=False)
    fig.colorbar(mesh, ax=ax, label="U")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def line_plot(x: np.ndarray, series: Mapping[str, np.ndarray], path, xlabel: str = "",
              ylabel: str = "", title: str = "",
              markers: Optional[Sequence[tuple[float, float]]] = None,
              logx: bool = False, logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, label=label, lw=1.2)
    if markers:
        mx, my = zip(*markers)
        ax.plot(mx, my, "o", color="crimson", ms=5, label="crossings")
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1 or markers:
        ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
