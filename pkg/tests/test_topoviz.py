import numpy as np
import pytest

from milrp import topoviz
from milrp.topoviz import (TopoPlot, channel_positions, color_position, idw,
                           idw_raster, render, side_by_side)


class TestGeometry:
    def test_positions_span_the_disk(self, grid):
        pos = channel_positions(grid)
        assert set(pos) == set(grid.placements)
        xs = [p[0] for p in pos.values()]
        ys = [p[1] for p in pos.values()]
        assert min(xs) >= -0.8 and max(xs) <= 0.8
        assert min(ys) >= -0.8 and max(ys) <= 0.8
        assert pos["C5"][0] == -0.8 and pos["C6"][0] == 0.8
        assert pos["Fz"][1] == 0.8

    def test_c3_c4_mirror(self, grid):
        pos = channel_positions(grid)
        assert pos["C3"][1] == pos["C4"][1]
        assert abs(pos["C3"][0] + pos["C4"][0]) < 1e-12


class TestIdw:
    def test_exact_at_sites(self, rng):
        sites = rng.uniform(-0.8, 0.8, size=(6, 2))
        values = rng.normal(size=6)
        out = idw(sites, values, sites)
        np.testing.assert_array_equal(out, values)

    def test_two_sites_have_a_zero_crossing_between(self):
        sites = np.array([[-0.5, 0.0], [0.5, 0.0]])
        values = np.array([0.1, -0.1])
        queries = np.array([[-0.5, 0.0], [0.5, 0.0], [0.0, 0.0],
                            [-0.49, 0.0], [0.49, 0.0]])
        out = idw(sites, values, queries)
        assert out[0] == 0.1 and out[1] == -0.1
        assert abs(out[2]) < 1e-15          # midpoint cancels exactly
        assert out[3] > 0.09 and out[4] < -0.09

    def test_weights_fade_monotonically_from_a_site(self):
        sites = np.array([[0.0, 0.0], [0.9, 0.0]])
        values = np.array([1.0, 0.0])
        xs = np.linspace(0.05, 0.85, 9)
        out = idw(sites, values, np.column_stack([xs, np.zeros(9)]))
        assert np.all(np.diff(out) < 0.0)


class TestRaster:
    def test_masked_outside_the_head_circle(self):
        plot = TopoPlot(scores={"C3": 0.05, "C4": -0.05})
        r = idw_raster(plot)
        assert r.shape == (64, 64)
        assert np.isnan(r[0, 0]) and np.isnan(r[-1, -1])
        assert np.isfinite(r[32, 32])

    def test_constant_scores_give_a_flat_field(self):
        plot = TopoPlot(scores={"C3": 0.0, "C4": 0.0, "Cz": 0.0})
        r = idw_raster(plot)
        inside = r[np.isfinite(r)]
        assert np.all(inside == 0.0)
        assert color_position(0.0, plot.lo, plot.hi) == 0.5  # mid-scale white

    def test_values_clamped_to_the_color_range(self):
        plot = TopoPlot(scores={"C3": 5.0, "C4": -5.0})
        r = idw_raster(plot)
        inside = r[np.isfinite(r)]
        assert inside.max() <= plot.hi and inside.min() >= plot.lo

    def test_row_zero_is_the_top_of_the_head(self):
        plot = TopoPlot(scores={"Fz": 0.1, "POz": -0.1})  # front vs back
        r = idw_raster(plot)
        top = np.nanmean(r[:16])
        bottom = np.nanmean(r[-16:])
        assert top > 0 > bottom


class TestColorScale:
    def test_monotone_inside_the_range(self):
        values = np.linspace(-0.1, 0.1, 21)
        pos = [color_position(v, -0.1, 0.1) for v in values]
        assert all(a < b for a, b in zip(pos, pos[1:]))

    def test_clamped_outside_the_range(self):
        assert color_position(-1.0, -0.1, 0.1) == 0.0
        assert color_position(1.0, -0.1, 0.1) == 1.0

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            color_position(0.0, 0.1, -0.1)


class TestValidation:
    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            TopoPlot(scores={})

    def test_non_finite_score_names_the_channel(self):
        with pytest.raises(ValueError, match="C3"):
            TopoPlot(scores={"C3": float("nan")})

    def test_unknown_channel_rejected(self):
        with pytest.raises(ValueError, match="position"):
            TopoPlot(scores={"XX": 0.0})

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            TopoPlot(scores={"C3": 0.0}, lo=0.1, hi=-0.1)


class TestRender:
    def test_byte_identical_for_identical_input(self):
        plot = TopoPlot(scores={"C3": 0.08, "C4": -0.08, "Cz": 0.01})
        assert render(plot) == render(plot)

    def test_svg_carries_range_labels_and_channel_names(self):
        plot = TopoPlot(scores={"C3": 0.08, "C4": -0.08})
        svg = render(plot).decode("utf-8")
        assert svg.startswith("<?xml")
        assert "C3" in svg and "C4" in svg
        assert "0.1" in svg  # color bar endpoints

    def test_render_writes_the_file(self, tmp_path):
        plot = TopoPlot(scores={"C3": 0.08, "C4": -0.08})
        target = tmp_path / "topo.svg"
        data = render(plot, target)
        assert target.read_bytes() == data

    def test_custom_range_changes_the_endpoints(self):
        plot = TopoPlot(scores={"C3": 0.0, "C4": 0.0}, lo=-0.2, hi=0.2)
        svg = render(plot).decode("utf-8")
        assert "0.2" in svg

    def test_footnote_embedded(self):
        plot = TopoPlot(scores={"C3": 0.0, "C4": 0.0})
        svg = render(plot, footnote="digest cafe01").decode("utf-8")
        assert "digest cafe01" in svg


class TestSideBySide:
    def test_caption_is_verbatim_and_output_deterministic(self):
        a = TopoPlot(scores={"C3": 0.1, "C4": -0.1})
        b = TopoPlot(scores={"C3": -0.1, "C4": 0.1})
        svg = side_by_side(a, b, "A08")
        assert svg == side_by_side(a, b, "A08")
        text = svg.decode("utf-8")
        assert ">A08<" in text or "A08" in text
        assert "0.1" in text

    def test_identical_plots_render_two_panels(self):
        a = TopoPlot(scores={"C3": 0.1, "C4": -0.1})
        svg = side_by_side(a, a, "same").decode("utf-8")
        assert svg.count("<g id=\"axes_") >= 2 or "axes_2" in svg

    def test_mismatched_ranges_rejected(self):
        a = TopoPlot(scores={"C3": 0.1}, lo=-0.1, hi=0.1)
        b = TopoPlot(scores={"C3": 0.1}, lo=-0.2, hi=0.2)
        with pytest.raises(ValueError, match="ranges"):
            side_by_side(a, b, "x")
