"""Deterministic SVG figures: temporal attribution scatter, importance curves, histograms.

Documents are assembled from strings with every coordinate printed to three
decimals; there are no timestamps or random ids, so equal inputs give
byte-identical output.
"""
import html
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from wildxai.exceptions import EmptyInputError, RenderError, UnknownFeatureError
from wildxai.models.attribution import AttributionSummary, FeatureRanking
from wildxai.services.analytics import filter_ranking, rank_features

logger = logging.getLogger(__name__)

RGB = Tuple[int, int, int]

NEGATIVE: RGB = (0, 0, 255)
ZERO: RGB = (255, 255, 255)
POSITIVE: RGB = (255, 0, 0)

# distinct line colours for curve plots, cycled in order
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
LEGEND_STEPS = 11
LEGEND_SWATCH = 14.0


class PlotStyle(BaseModel):
    """Fixed figure constants; nothing here depends on the data."""

    model_config = ConfigDict(frozen=True)

    r_min: float = Field(2.0, ge=0)
    r_max: float = Field(10.0, gt=0)
    cell_size: float = Field(24.0, gt=0)
    vmax: Optional[float] = None
    font_family: str = "Helvetica, Arial, sans-serif"
    font_size: int = 11
    margin: float = 16.0
    title_height: float = 28.0
    axis_height: float = 36.0
    legend_width: float = 150.0
    plot_width: float = 640.0
    plot_height: float = 320.0


def _num(x: float) -> str:
    out = f"{x:.3f}"
    return "0.000" if out == "-0.000" else out


def _text(x: float, y: float, body: str, style: PlotStyle, anchor: str = "start", size: Optional[int] = None) -> str:
    return (
        f'<text x="{_num(x)}" y="{_num(y)}" font-family="{html.escape(style.font_family)}" '
        f'font-size="{size or style.font_size}" text-anchor="{anchor}">{html.escape(body)}</text>'
    )


def _document(width: float, height: float, body: List[str]) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}">'
    )
    return "\n".join([head, f'<rect x="0" y="0" width="{_num(width)}" height="{_num(height)}" fill="#ffffff"/>', *body, "</svg>"]) + "\n"


def _quantize(channel: float) -> int:
    # round half up
    return int(math.floor(channel + 0.5))


def colormap(value: float, vmax: float) -> RGB:
    """
    Blue-white-red diverging colour for ``value`` on [-vmax, vmax].

    Args:
        value: Attribution value (clamped to the range)
        vmax: Positive half-range

    Returns:
        RGB: Integer channels, 0 maps to pure white
    """
    if not math.isfinite(vmax) or vmax <= 0:
        raise RenderError(f"vmax must be positive, got {vmax}")
    t = max(-1.0, min(1.0, value / vmax))
    if t >= 0:
        fade = _quantize(255 * (1 - t))
        return (255, fade, fade)
    fade = _quantize(255 * (1 + t))
    return (fade, fade, 255)


def radius(value: float, vmax: float, style: PlotStyle) -> float:
    """Dot radius, affine in |value| and clamped to [r_min, r_max]."""
    if not math.isfinite(vmax) or vmax <= 0:
        raise RenderError(f"vmax must be positive, got {vmax}")
    r = style.r_min + (style.r_max - style.r_min) * abs(value) / vmax
    return min(style.r_max, max(style.r_min, r))


def _hex(rgb: RGB) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_temporal_scatter(
    summary: AttributionSummary,
    style: Optional[PlotStyle] = None,
    feature_order: Optional[FeatureRanking] = None,
    min_score: Optional[float] = None,
) -> str:
    """
    Scatter of one dot per (feature, day): colour = sign and size, radius = |value|.

    Features run down the y-axis in ranking order, days 1..L left to right.

    Args:
        summary: Mean attribution grid
        style: Figure constants
        feature_order: Row order (default: full ranking of ``summary``)
        min_score: Optional display filter on the ranking score

    Returns:
        str: SVG document
    """
    style = style or PlotStyle()
    ranking = feature_order or rank_features(summary)
    if min_score is not None:
        ranking = filter_ranking(ranking, min_score)
    rows = ranking.features
    unknown = [f for f in rows if f not in summary.feature_names]
    if unknown:
        raise UnknownFeatureError(f"ranking lists features missing from the summary: {', '.join(unknown)}")
    if not rows:
        raise RenderError("no features left to plot after the display filter")

    grid = np.array([summary.row(f) for f in rows])
    peak = float(np.abs(grid).max())
    vmax = style.vmax if style.vmax is not None else (peak if peak > 0 else 1.0)

    L = grid.shape[1]
    cell = style.cell_size
    label_width = style.margin + 0.6 * style.font_size * max(len(f) for f in rows)
    left = label_width + style.margin
    top = style.margin + style.title_height
    width = left + L * cell + style.margin + style.legend_width
    height = top + max(len(rows) * cell + style.axis_height, _legend_height(style)) + style.margin

    body = [
        _text(style.margin, style.margin + style.font_size,
              f"{summary.explainer.value} | n={summary.count} | {summary.group_key}", style, size=style.font_size + 2),
        f'<rect x="{_num(left)}" y="{_num(top)}" width="{_num(L * cell)}" height="{_num(len(rows) * cell)}" '
        f'fill="none" stroke="#cccccc" stroke-width="1"/>',
    ]
    for r, feature in enumerate(rows):
        cy = top + (r + 0.5) * cell
        body.append(_text(left - style.margin / 2, cy + style.font_size / 3, feature, style, anchor="end"))
        for t in range(L):
            value = float(grid[r, t])
            body.append(
                f'<circle cx="{_num(left + (t + 0.5) * cell)}" cy="{_num(cy)}" r="{_num(radius(value, vmax, style))}" '
                f'fill="{_hex(colormap(value, vmax))}" stroke="#999999" stroke-width="0.5"/>'
            )
    axis_y = top + len(rows) * cell + style.font_size + 4
    for t in range(L):
        body.append(_text(left + (t + 0.5) * cell, axis_y, str(t + 1), style, anchor="middle"))
    body.append(_text(left + L * cell / 2, axis_y + style.font_size + 6, "day", style, anchor="middle"))
    body.extend(_legend(left + L * cell + style.margin, top, vmax, style))

    logger.debug(f"Rendered scatter: {len(rows)} features x {L} days, vmax={vmax:.6g}")
    return _document(width, height, body)


def _legend_height(style: PlotStyle) -> float:
    return style.font_size + 6 + LEGEND_STEPS * LEGEND_SWATCH


def _legend(x: float, y: float, vmax: float, style: PlotStyle) -> List[str]:
    steps = LEGEND_STEPS
    swatch = LEGEND_SWATCH
    parts = [_text(x, y + style.font_size, "value", style)]
    for i in range(steps):
        value = vmax * (1 - 2 * i / (steps - 1))
        sy = y + style.font_size + 6 + i * swatch
        parts.append(
            f'<rect x="{_num(x)}" y="{_num(sy)}" width="{_num(swatch)}" height="{_num(swatch)}" '
            f'fill="{_hex(colormap(value, vmax))}" stroke="#999999" stroke-width="0.5"/>'
        )
        if i in (0, steps // 2, steps - 1):
            parts.append(_text(x + swatch + 6, sy + swatch - 3, f"{value:+.3f}", style))
    return parts


def render_curves(series: Dict[str, Sequence[float]], style: Optional[PlotStyle] = None, title: str = "") -> str:
    """
    Line plot of day-indexed series with a zero baseline and a legend.

    Raises:
        RenderError: No series, or series of unequal length
    """
    style = style or PlotStyle()
    if not series:
        raise RenderError("render_curves needs at least one series")
    arrays = {name: np.asarray(values, dtype=np.float64) for name, values in series.items()}
    lengths = {len(a) for a in arrays.values()}
    if len(lengths) != 1:
        raise RenderError(f"series lengths differ: {sorted(lengths)}")
    L = lengths.pop()
    if L < 1:
        raise RenderError("series must have at least one point")

    stacked = np.concatenate(list(arrays.values()))
    lo, hi = min(0.0, float(stacked.min())), max(0.0, float(stacked.max()))
    if hi == lo:
        lo, hi = -1.0, 1.0
    left = style.margin + 56
    top = style.margin + style.title_height
    w, h = style.plot_width, style.plot_height

    def sx(t: int) -> float:
        return left + (w * t / (L - 1) if L > 1 else w / 2)

    def sy(v: float) -> float:
        return top + h * (hi - v) / (hi - lo)

    body = [_text(style.margin, style.margin + style.font_size, title, style, size=style.font_size + 2)] if title else []
    body.append(
        f'<rect x="{_num(left)}" y="{_num(top)}" width="{_num(w)}" height="{_num(h)}" fill="none" stroke="#cccccc" stroke-width="1"/>'
    )
    body.append(
        f'<line x1="{_num(left)}" y1="{_num(sy(0.0))}" x2="{_num(left + w)}" y2="{_num(sy(0.0))}" '
        f'stroke="#000000" stroke-width="1" stroke-dasharray="4 3"/>'
    )
    for label_value in (hi, 0.0, lo):
        body.append(_text(left - 6, sy(label_value) + style.font_size / 3, f"{label_value:.3f}", style, anchor="end"))
    for t in range(L):
        body.append(_text(sx(t), top + h + style.font_size + 4, str(t + 1), style, anchor="middle"))

    legend_x = left + w + style.margin
    for i, (name, values) in enumerate(arrays.items()):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        points = " ".join(f"{_num(sx(t))},{_num(sy(float(v)))}" for t, v in enumerate(values))
        body.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + i * (style.font_size + 8)
        body.append(
            f'<line x1="{_num(legend_x)}" y1="{_num(ly + 4)}" x2="{_num(legend_x + 18)}" y2="{_num(ly + 4)}" stroke="{color}" stroke-width="2"/>'
        )
        body.append(_text(legend_x + 24, ly + 8, name, style))

    width = legend_x + style.legend_width
    height = top + h + style.axis_height + style.margin
    return _document(width, height, body)


def histogram_counts(values: Sequence[float], bins: int) -> Tuple[np.ndarray, np.ndarray]:
    """Equal-width bin counts over [min, max] (a constant vector gets min +/- 0.5)."""
    if bins < 1:
        raise RenderError(f"bins must be >= 1, got {bins}")
    data = np.asarray(values, dtype=np.float64)
    data = data[~np.isnan(data)]
    if not len(data):
        raise EmptyInputError("histogram needs at least one value")
    lo, hi = float(data.min()), float(data.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(data, bins=bins, range=(lo, hi))


def render_histogram(values: Sequence[float], bins: int = 30, style: Optional[PlotStyle] = None, title: str = "") -> str:
    """Bar histogram of a feature's observed values."""
    style = style or PlotStyle()
    counts, edges = histogram_counts(values, bins)
    left = style.margin + 56
    top = style.margin + style.title_height
    w, h = style.plot_width, style.plot_height
    peak = int(counts.max())
    bar = w / bins

    body = [_text(style.margin, style.margin + style.font_size, title, style, size=style.font_size + 2)] if title else []
    body.append(
        f'<line x1="{_num(left)}" y1="{_num(top + h)}" x2="{_num(left + w)}" y2="{_num(top + h)}" stroke="#000000" stroke-width="1"/>'
    )
    for i, count in enumerate(counts):
        bh = h * count / peak
        body.append(
            f'<rect x="{_num(left + i * bar)}" y="{_num(top + h - bh)}" width="{_num(bar)}" height="{_num(bh)}" '
            f'fill="#4c72b0" stroke="#ffffff" stroke-width="0.5" data-count="{int(count)}"/>'
        )
    body.append(_text(left - 6, top + style.font_size / 3, str(peak), style, anchor="end"))
    body.append(_text(left - 6, top + h, "0", style, anchor="end"))
    body.append(_text(left, top + h + style.font_size + 4, f"{edges[0]:.3f}", style, anchor="start"))
    body.append(_text(left + w, top + h + style.font_size + 4, f"{edges[-1]:.3f}", style, anchor="end"))

    width = left + w + style.margin
    height = top + h + style.axis_height + style.margin
    return _document(width, height, body)


def write_svg(document: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(document)
    logger.info(f"Wrote {path}")
    return path
