"""Tiny static SVG line charts, written by hand to keep outputs dependency-free
and byte-stable for a given input."""

from __future__ import annotations

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

_MARGIN_LEFT = 70
_MARGIN_RIGHT = 20
_MARGIN_TOP = 36
_MARGIN_BOTTOM = 48


def _finite_points(xs, ys):
    return [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]


def write_line_chart(
    path,
    series: list[tuple[str, list, list]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 760,
    height: int = 440,
    ylog: bool | None = None,
) -> None:
    """Write a multi-series polyline chart.

    series is a list of (label, xs, ys). With ylog=None the y axis goes
    logarithmic when every plotted value is positive and spans more than two
    decades.
    """
    pts = {label: _finite_points(xs, ys) for label, xs, ys in series}
    all_pts = [p for ps in pts.values() for p in ps]
    if not all_pts:
        raise ValueError("nothing to plot: no finite points")
    ymin = min(p[1] for p in all_pts)
    ymax = max(p[1] for p in all_pts)
    if ylog is None:
        ylog = ymin > 0 and ymax / max(ymin, 1e-300) > 100.0
    if ylog:
        transform = math.log10
        ymin, ymax = transform(ymin), transform(ymax)
    else:
        transform = float
    xmin = min(p[0] for p in all_pts)
    xmax = max(p[0] for p in all_pts)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0

    plot_w = width - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = height - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x):
        return _MARGIN_LEFT + (x - xmin) / (xmax - xmin) * plot_w

    def py(y):
        return _MARGIN_TOP + (1.0 - (transform(y) - ymin) / (ymax - ymin)) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{_MARGIN_LEFT}" y="{_MARGIN_TOP}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    if title:
        lines.append(
            f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    for idx, (label, _, _) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        poly = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts[label])
        if poly:
            lines.append(
                f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.6"/>'
            )
        ly = _MARGIN_TOP + 16 + 16 * idx
        lx = width - _MARGIN_RIGHT - 150
        lines.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="3" fill="{color}"/>')
        lines.append(
            f'<text x="{lx + 18}" y="{ly}" font-family="sans-serif" font-size="11">{label}</text>'
        )
    axis_font = 'font-family="sans-serif" font-size="11"'
    y_lo = f"{10 ** ymin:.3g}" if ylog else f"{ymin:.3g}"
    y_hi = f"{10 ** ymax:.3g}" if ylog else f"{ymax:.3g}"
    lines.append(
        f'<text x="{_MARGIN_LEFT - 6}" y="{_MARGIN_TOP + plot_h}" text-anchor="end" {axis_font}>'
        f"{y_lo}</text>"
    )
    lines.append(
        f'<text x="{_MARGIN_LEFT - 6}" y="{_MARGIN_TOP + 10}" text-anchor="end" {axis_font}>'
        f"{y_hi}</text>"
    )
    lines.append(
        f'<text x="{_MARGIN_LEFT}" y="{height - 28}" {axis_font}>{xmin:.3g}</text>'
    )
    lines.append(
        f'<text x="{_MARGIN_LEFT + plot_w}" y="{height - 28}" text-anchor="end" {axis_font}>'
        f"{xmax:.3g}</text>"
    )
    if xlabel:
        lines.append(
            f'<text x="{_MARGIN_LEFT + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" '
            f"{axis_font}>{xlabel}</text>"
        )
    if ylabel:
        cx, cy = 18, _MARGIN_TOP + plot_h / 2
        lines.append(
            f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" {axis_font} '
            f'transform="rotate(-90 {cx} {cy:.1f})">{ylabel}</text>'
        )
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
