"""Minimal polyline plots written as standalone SVG text.

Only what the experiment outputs need: one or more named series on shared
axes, optional log10 y axis, tick labels and a legend. Coordinates are
formatted with fixed precision so the same data always gives the same bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt_tick(v: float, log: bool) -> str:
    if log:
        return f"1e{v:.0f}" if float(v).is_integer() else f"1e{v:.1f}"
    return f"{v:.3g}"


def line_plot(series, title="", xlabel="", ylabel="", logy=False) -> str:
    """Render ``series`` (an ordered mapping label -> (xs, ys)) as SVG text.

    With ``logy`` the y values are plotted as log10; non-positive values are
    dropped from that series since they have no position on the axis.
    """
    cleaned = []
    for label, (xs, ys) in series.items():
        pts = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if logy:
                if not y > 0:
                    continue
                y = math.log10(y)
            if math.isfinite(x) and math.isfinite(y):
                pts.append((x, y))
        cleaned.append((label, pts))

    all_pts = [p for _, pts in cleaned for p in pts]
    if all_pts:
        x0, x1 = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
        y0, y1 = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if logy:
        y0, y1 = math.floor(y0), math.ceil(y1)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')

    if logy:
        yt = [float(v) for v in range(int(y0), int(y1) + 1)]
        step = max(1, math.ceil(len(yt) / 8))
        yt = yt[::step]
    else:
        yt = _ticks(y0, y1)
    for v in yt:
        y = sy(v)
        out.append(f'<line x1="{MARGIN["left"] - 4}" y1="{y:.2f}" x2="{MARGIN["left"]}" y2="{y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt_tick(v, logy)}</text>'
        )
    for v in _ticks(x0, x1):
        x = sx(v)
        base = MARGIN["top"] + ph
        out.append(f'<line x1="{x:.2f}" y1="{base}" x2="{x:.2f}" y2="{base + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{base + 18}" text-anchor="middle">{_fmt_tick(v, False)}</text>')
    if xlabel:
        out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>'
        )

    for i, (label, pts) in enumerate(cleaned):
        colour = COLOURS[i % len(COLOURS)]
        if len(pts) > 1:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        for x, y in pts if len(pts) <= 60 else ():
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{colour}"/>')
        ly = MARGIN["top"] + 14 + 16 * i
        lx = MARGIN["left"] + pw - 150
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
