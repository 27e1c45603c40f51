import xml.etree.ElementTree as ET

import numpy as np
import pytest
from matplotlib.colors import to_hex
from matplotlib.figure import Figure

from ugc_equilibria.core import GameConfig, TypeDistribution
from ugc_equilibria.partialinfo import calibrate_beta
from ugc_equilibria.plotting import SEGMENT_COLORS, plot_strategy, render_curve_svg


def square_grid(n=201):
    xs = np.linspace(0, 1, n)
    return xs, xs ** 2, np.array(["original"] * n)


class TestPlotStrategy:
    def test_square_curve_below_diagonal_and_convex(self):
        ax = Figure().add_subplot()
        plot_strategy(ax, *square_grid())
        diag, curve = ax.lines[0], ax.lines[1]
        assert diag.get_linestyle() == "--"
        x, y = curve.get_data()
        assert np.all(y <= x)
        assert np.all(np.diff(y, 2) >= -1e-12)
        assert ax.get_xlim() == (0, 1) and ax.get_ylim() == (0, 1)

    def test_segment_colours(self):
        cfg = GameConfig("M6", 11, 8.0, 1.0, top_k=5, distribution=TypeDistribution.uniform())
        ax = Figure().add_subplot()
        plot_strategy(ax, *calibrate_beta(cfg).grid)
        colours = {to_hex(line.get_color()) for line in ax.lines[1:]}
        assert colours == {to_hex(c) for c in SEGMENT_COLORS.values()}
        # runs join without gaps
        ends = [(line.get_xdata()[0], line.get_xdata()[-1]) for line in ax.lines[1:]]
        assert all(a[1] == b[0] for a, b in zip(ends, ends[1:]))
        labels = [t.get_text() for t in ax.get_legend().get_texts()]
        assert len(labels) == 4

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            plot_strategy(Figure().add_subplot(), [], [], [])


class TestRenderSVG:
    def test_writes_valid_svg(self, tmp_path):
        path = render_curve_svg(*square_grid(), tmp_path / "curve.svg")
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        assert "Date" not in path.read_text()

    def test_byte_identical(self, tmp_path):
        a = render_curve_svg(*square_grid(), tmp_path / "a.svg", title="t")
        b = render_curve_svg(*square_grid(), tmp_path / "b.svg", title="t")
        assert a.read_bytes() == b.read_bytes()

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            render_curve_svg(*square_grid(), tmp_path / "missing" / "curve.svg")
