"""SVG line charts for histograms and accuracy-by-length curves.

matplotlib is optional; install the ``plot`` extra to use this module.
"""

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import atomic_write_bytes
from .errors import ConfigError, CorpusError

logger = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise ConfigError("charts need matplotlib: pip install 'sentence-bottleneck-ae[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_line_chart(
    path: Path,
    series: Mapping[str, Sequence[tuple[float, float]]],
    title: str,
    x_label: str,
    y_label: str,
) -> Path:
    """Write one line per named series to ``path`` as SVG."""
    if not any(series.values()):
        raise CorpusError("nothing to plot")
    plt = _pyplot()
    # text stays text; a fixed salt keeps element ids stable between runs
    plt.rcParams.update({"svg.fonttype": "none", "svg.hashsalt": "sbae"})
    fig = plt.figure(figsize=(8, 4.5))
    try:
        for name, points in series.items():
            xs, ys = zip(*sorted(points)) if points else ((), ())
            plt.plot(xs, ys, marker="o", markersize=3, label=name)
        plt.xlabel(x_label)
        plt.ylabel(y_label)
        plt.title(title)
        plt.legend()
        plt.grid(True, alpha=0.3)
        plt.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info("chart written to %s", path)
    return path
