"""Scalp topography rendering for per-channel relevance scores.

Grid placements map linearly onto the unit disk; scores are spread over a
64x64 raster by inverse-distance-weighted interpolation (power 2, exact at
the channel sites), clipped to the head circle, and drawn with a symmetric
blue-white-red scale anchored at zero.  Output is SVG with deterministic
bytes for identical input.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .featmap import GRID_ROWS, GRID_COLS, ChannelGrid, default_grid

__all__ = [
    "TopoPlot",
    "channel_positions",
    "idw",
    "idw_raster",
    "color_position",
    "render",
    "side_by_side",
    "save_figure",
]

DEFAULT_RANGE = (-0.1, 0.1)
RASTER_CELLS = 64
IDW_POWER = 2
_SVG_SALT = "milrp-topoviz"
_CMAP = "bwr"


def channel_positions(grid: ChannelGrid | None = None) -> dict[str, tuple[float, float]]:
    """Grid cells mapped linearly onto [-0.8, 0.8]^2 inside the head circle."""
    if grid is None:
        grid = default_grid()
    out = {}
    for ch, (r, c) in grid.placements.items():
        x = -0.8 + c * (1.6 / (GRID_COLS - 1))
        y = 0.8 - r * (1.6 / (GRID_ROWS - 1))
        out[ch] = (x, y)
    return out


@dataclass
class TopoPlot:
    """Channel scores plus the geometry and color range to draw them with."""

    scores: dict[str, float]
    lo: float = DEFAULT_RANGE[0]
    hi: float = DEFAULT_RANGE[1]
    positions: dict[str, tuple[float, float]] = field(default_factory=channel_positions)

    def __post_init__(self):
        if not self.scores:
            raise ValueError("a topography needs at least one scored channel")
        if not self.lo < self.hi:
            raise ValueError(f"color range lo {self.lo} must be below hi {self.hi}")
        for ch, v in self.scores.items():
            if not np.isfinite(v):
                raise ValueError(f"non-finite score for channel {ch}: {v}")
            if ch not in self.positions:
                raise ValueError(f"no position known for scored channel {ch}")


def idw(sites: np.ndarray, values: np.ndarray, queries: np.ndarray,
        power: int = IDW_POWER) -> np.ndarray:
    """Inverse-distance-weighted interpolation; exact at the sites."""
    sites = np.asarray(sites, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    d2 = ((queries[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
    out = np.empty(len(queries))
    hit = d2 < 1e-24
    exact = hit.any(axis=1)
    out[exact] = values[np.argmax(hit[exact], axis=1)]
    w = 1.0 / d2[~exact] ** (power / 2.0)
    out[~exact] = (w * values).sum(axis=1) / w.sum(axis=1)
    return out


def idw_raster(plot: TopoPlot, cells: int = RASTER_CELLS) -> np.ndarray:
    """Interpolated score field over the head disk; NaN outside the circle.

    Row 0 is the top of the head; values are clamped to the color range.
    """
    channels = sorted(plot.scores)
    sites = np.array([plot.positions[ch] for ch in channels])
    values = np.array([plot.scores[ch] for ch in channels])
    centers = (np.arange(cells) + 0.5) / cells * 2.0 - 1.0
    xs, ys = np.meshgrid(centers, centers[::-1])  # row 0 at y = +1
    queries = np.column_stack([xs.ravel(), ys.ravel()])
    field_ = idw(sites, values, queries).reshape(cells, cells)
    field_ = np.clip(field_, plot.lo, plot.hi)
    outside = xs ** 2 + ys ** 2 > 1.0
    field_[outside] = np.nan
    return field_


def color_position(value: float, lo: float, hi: float) -> float:
    """Normalized, clamped position of a score on the color scale."""
    if not lo < hi:
        raise ValueError(f"bad color range ({lo}, {hi})")
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def _draw_head(ax, plot: TopoPlot, raster: np.ndarray):
    im = ax.imshow(raster, extent=(-1, 1, -1, 1), origin="upper",
                   cmap=_CMAP, vmin=plot.lo, vmax=plot.hi,
                   interpolation="nearest")
    theta = np.linspace(0.0, 2.0 * np.pi, 256)
    ax.plot(np.cos(theta), np.sin(theta), color="black", lw=1.2)
    ax.plot([-0.08, 0.0, 0.08], [0.995, 1.08, 0.995], color="black", lw=1.2)
    for ch in sorted(plot.scores):
        x, y = plot.positions[ch]
        ax.plot([x], [y], marker="o", color="black", ms=2.0)
        ax.text(x, y + 0.045, ch, ha="center", va="bottom", fontsize=5)
    ax.set_xlim(-1.15, 1.15)
    ax.set_ylim(-1.15, 1.18)
    ax.set_aspect("equal")
    ax.axis("off")
    return im


def save_figure(fig: Figure, target) -> bytes:
    """Serialize a figure to SVG with reproducible bytes.

    ``target`` may be a path or None; the SVG bytes are returned either
    way.  A fixed hash salt and stripped creation date make identical
    input produce identical bytes.
    """
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT,
                                "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    data = buf.getvalue()
    if target is not None:
        with open(target, "wb") as f:
            f.write(data)
    return data


def render(plot: TopoPlot, path=None, title: str | None = None,
           footnote: str = "") -> bytes:
    """One topography with its color bar; returns the SVG bytes."""
    raster = idw_raster(plot)
    fig = Figure(figsize=(3.4, 3.0))
    ax = fig.add_subplot(111)
    im = _draw_head(ax, plot, raster)
    if title:
        ax.set_title(title, fontsize=9)
    cbar = fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    cbar.set_ticks([plot.lo, 0.0, plot.hi])
    cbar.ax.tick_params(labelsize=6)
    if footnote:
        fig.text(0.01, 0.01, footnote, fontsize=4, color="#666666")
    return save_figure(fig, path)


def side_by_side(left_plot: TopoPlot, right_plot: TopoPlot, subject: str,
                 path=None, footnote: str = "") -> bytes:
    """Two class topographies sharing one color bar, captioned verbatim."""
    if (left_plot.lo, left_plot.hi) != (right_plot.lo, right_plot.hi):
        raise ValueError(
            f"panels use different color ranges "
            f"({left_plot.lo}, {left_plot.hi}) vs "
            f"({right_plot.lo}, {right_plot.hi})")
    fig = Figure(figsize=(6.4, 3.2))
    axes = [fig.add_subplot(1, 2, 1), fig.add_subplot(1, 2, 2)]
    im = None
    for ax, plot, label in zip(axes, (left_plot, right_plot), ("left", "right")):
        im = _draw_head(ax, plot, idw_raster(plot))
        ax.set_title(label, fontsize=8)
    fig.suptitle(subject, fontsize=10)
    cbar = fig.colorbar(im, ax=axes, fraction=0.03, pad=0.03)
    cbar.set_ticks([left_plot.lo, 0.0, left_plot.hi])
    cbar.ax.tick_params(labelsize=6)
    if footnote:
        fig.text(0.01, 0.01, footnote, fontsize=4, color="#666666")
    return save_figure(fig, path)
