"""
Base Plot - shared matplotlib figure, axes and scaling for the plot renderers
"""
import io
import logging
import os
import sys
from typing import List, Sequence, Tuple

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import config

logger = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

# text stays as <text> elements and ids stay stable between runs
SVG_RC = {'svg.fonttype': 'none', 'svg.hashsalt': config.APP_TITLE}


class BasePlot:
    """Figure with linear or log10 axes; subclasses draw the series."""

    def __init__(self, title: str = "", x_label: str = "", y_label: str = "",
                 log_x: bool = False, log_y: bool = False,
                 width: int = config.PLOT_WIDTH, height: int = config.PLOT_HEIGHT):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.log_x = log_x
        self.log_y = log_y
        self.width = width
        self.height = height
        self.series: List[Tuple[str, np.ndarray, np.ndarray]] = []

    def add_series(self, name: str, x: Sequence[float], y: Sequence[float]):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"series {name!r}: x and y differ in length ({x.size} vs {y.size})")
        self.series.append((name, x, y))
        return self

    def drawable(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Finite points, positive on log axes."""
        mask = np.isfinite(x) & np.isfinite(y)
        if self.log_x:
            mask &= x > 0
        if self.log_y:
            mask &= y > 0
        return mask

    def _draw_series(self, ax, index: int, name: str, x: np.ndarray, y: np.ndarray):
        raise NotImplementedError

    def figure(self):
        """Figure with every series drawn; the caller closes it."""
        dpi = config.PLOT_DPI
        fig, ax = plt.subplots(figsize=(self.width / dpi, self.height / dpi), dpi=dpi)
        if self.log_x:
            ax.set_xscale('log')
        if self.log_y:
            ax.set_yscale('log')
        ax.set_title(self.title)
        ax.set_xlabel(self.x_label)
        ax.set_ylabel(self.y_label)
        for index, (name, x, y) in enumerate(self.series):
            self._draw_series(ax, index, name, x, y)
        if self.series:
            ax.legend(loc='best', fontsize='small')
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        return fig

    def render(self) -> str:
        """Complete SVG document"""
        if not self.series:
            logger.warning(f"Rendering empty plot {self.title!r}")
        buffer = io.StringIO()
        with plt.rc_context(SVG_RC):
            fig = self.figure()
            try:
                fig.savefig(buffer, format='svg', metadata={'Date': None})
            finally:
                plt.close(fig)
        return buffer.getvalue()
