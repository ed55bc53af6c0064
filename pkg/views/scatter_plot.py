"""
Scatter Plot - one marker per drawable point
"""
from .base_plot import PALETTE, BasePlot


class ScatterPlot(BasePlot):

    def __init__(self, *args, radius: float = 3.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.radius = radius

    def _draw_series(self, ax, index, name, x, y):
        mask = self.drawable(x, y)
        ax.scatter(x[mask], y[mask], s=(2 * self.radius) ** 2, color=PALETTE[index % len(PALETTE)], label=name)
