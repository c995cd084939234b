"""Static SVG line plots with optional +-std bands.

matplotlib writes the SVG with a fixed hash salt, glyphs as paths and no
date metadata, so identical inputs give byte-identical files.
"""

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "svg.hashsalt": "e2tc",
    "svg.fonttype": "path",
    "path.simplify": False,
    "font.family": "DejaVu Sans",
}


def emit_svg_lines(series: dict, path, bands: Optional[dict] = None, x: Optional[Sequence] = None,
                   log_x: bool = False, log_y: bool = False, title: str = "",
                   xlabel: str = "t", ylabel: str = "cumulative regret") -> Path:
    """One line per ``series`` entry; ``bands[name]`` is the std drawn as mean +- std."""
    path = Path(path)
    if not series:
        raise ValueError("nothing to plot")
    bands = bands or {}
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name, y in series.items():
            y = np.asarray(y, dtype=float)
            xs = np.arange(1, y.size + 1) if x is None else np.asarray(x, dtype=float)
            line, = ax.plot(xs, y, label=str(name), linewidth=1.2)
            if name in bands:
                s = np.asarray(bands[name], dtype=float)
                ax.fill_between(xs, y - s, y + s, color=line.get_color(), alpha=0.2, linewidth=0)
        if log_x:
            ax.set_xscale("log")
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror or exc}") from exc
        finally:
            plt.close(fig)
    return path
