"""
Views Package - matplotlib SVG renderers for experiment tables
"""
import logging

from .base_plot import BasePlot

try:
    from .line_plot import LinePlot
except Exception as e:
    logging.warning(f"LinePlot not available: {e}")
    LinePlot = None

try:
    from .scatter_plot import ScatterPlot
except Exception as e:
    logging.warning(f"ScatterPlot not available: {e}")
    ScatterPlot = None

# Build only available renderers
PLOT_CLASSES = {
    k: v for k, v in {
        "line": LinePlot,
        "scatter": ScatterPlot,
    }.items() if v is not None
}

__all__ = [
    'BasePlot',
    'LinePlot',
    'ScatterPlot',
    'PLOT_CLASSES'
]
