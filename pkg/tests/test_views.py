"""
Tests for the matplotlib plot renderers.
"""
import matplotlib.pyplot as plt
import numpy as np
import pytest

from views import PLOT_CLASSES, LinePlot, ScatterPlot


@pytest.fixture
def drawn():
    """Build a figure from a plot and close it after the test."""
    figures = []

    def _draw(plot):
        figure = plot.figure()
        figures.append(figure)
        return figure.axes[0]

    yield _draw
    for figure in figures:
        plt.close(figure)


def test_registry_has_both_renderers():
    assert PLOT_CLASSES == {"line": LinePlot, "scatter": ScatterPlot}


def test_render_is_svg_document():
    svg = LinePlot(title="shift").add_series("a", [1, 2, 3], [3, 1, 2]).render()
    assert svg.startswith("<?xml")
    assert "<svg" in svg
    assert svg.rstrip().endswith("</svg>")


def test_render_is_reproducible():
    plot = ScatterPlot(log_y=True).add_series("a", [1, 2, 3], [1e-3, 1.0, 1e3])
    assert plot.render() == plot.render()


def test_line_plot_draws_one_line_per_series(drawn):
    ax = drawn(LinePlot().add_series("a", [1, 2, 3], [3, 1, 2]).add_series("b", [1, 2, 3], [1, 1, 1]))
    assert len(ax.lines) == 2
    assert [line.get_label() for line in ax.lines] == ["a", "b"]


def test_scatter_plot_draws_one_marker_per_point(drawn):
    ax = drawn(ScatterPlot().add_series("a", [1, 2, 3, 4], [1, 4, 9, 16]))
    assert len(ax.collections[0].get_offsets()) == 4


def test_log_axis_drops_non_positive_values(drawn):
    ax = drawn(ScatterPlot(log_y=True).add_series("a", [1, 2, 3, 4], [0.0, -1.0, 10.0, 100.0]))
    assert ax.get_yscale() == "log"
    np.testing.assert_allclose(np.asarray(ax.collections[0].get_offsets()), [[3, 10], [4, 100]])


def test_line_breaks_at_undrawable_points(drawn):
    ax = drawn(LinePlot(log_x=True).add_series("a", [-1, 2, 3, 4, 5], [1, 2, np.nan, 4, 5]))
    ydata = np.asarray(ax.lines[0].get_ydata(), dtype=float)
    assert np.isnan(ydata[[0, 2]]).all()
    assert np.isfinite(ydata[[1, 3, 4]]).all()


def test_labels_are_escaped():
    svg = LinePlot(title="a < b & c").add_series("x<y", [1, 2], [1, 2]).render()
    assert "a &lt; b &amp; c" in svg
    assert "x&lt;y" in svg


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="differ in length"):
        LinePlot().add_series("a", [1, 2, 3], [1, 2])


def test_empty_plot_still_renders():
    assert "<svg" in LinePlot().render()


def test_render_closes_its_figure():
    before = len(plt.get_fignums())
    LinePlot().add_series("a", [1, 2], [1, 2]).render()
    assert len(plt.get_fignums()) == before
