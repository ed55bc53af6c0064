"""
Line Plot - one line per series; gaps where points are not drawable
"""
import numpy as np

from .base_plot import PALETTE, BasePlot


class LinePlot(BasePlot):

    def _draw_series(self, ax, index, name, x, y):
        y = np.where(self.drawable(x, y), y, np.nan)
        ax.plot(x, y, color=PALETTE[index % len(PALETTE)], linewidth=1.5, label=name)
