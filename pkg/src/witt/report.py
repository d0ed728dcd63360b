"""Minimal SVG line plots built with the standard-library XML tree."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Mapping, Sequence

WIDTH, HEIGHT, MARGIN = 640, 420, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _span(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def line_plot(series: Mapping[str, Sequence[tuple[float, float]]], path, title: str = "",
              xlabel: str = "", ylabel: str = "") -> Path:
    """Write one ``<polyline>`` per non-empty series, with axes, ticks and a legend."""
    series = {k: [(float(x), float(y)) for x, y in v if math.isfinite(y)] for k, v in series.items()}
    series = {k: v for k, v in series.items() if v}
    if not series:
        raise ValueError("nothing to plot")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    (x0, x1), (y0, y1) = _span(xs), _span(ys)

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def py(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH), height=str(HEIGHT),
                     viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    axis = dict(stroke="black", attrib={"stroke-width": "1"})
    ET.SubElement(svg, "line", x1=str(MARGIN), y1=str(HEIGHT - MARGIN), x2=str(WIDTH - MARGIN),
                  y2=str(HEIGHT - MARGIN), **axis)
    ET.SubElement(svg, "line", x1=str(MARGIN), y1=str(MARGIN), x2=str(MARGIN), y2=str(HEIGHT - MARGIN), **axis)
    for i in range(5):
        tx, ty = x0 + i * (x1 - x0) / 4, y0 + i * (y1 - y0) / 4
        t = ET.SubElement(svg, "text", x=f"{px(tx):.1f}", y=str(HEIGHT - MARGIN + 16), attrib={"text-anchor": "middle",
                          "font-size": "11"})
        t.text = f"{tx:.3g}"
        t = ET.SubElement(svg, "text", x=str(MARGIN - 6), y=f"{py(ty) + 4:.1f}", attrib={"text-anchor": "end",
                          "font-size": "11"})
        t.text = f"{ty:.3g}"
    for text, x, y, extra in ((title, WIDTH / 2, 24, {}), (xlabel, WIDTH / 2, HEIGHT - 16, {}),
                              (ylabel, 16, HEIGHT / 2, {"transform": f"rotate(-90 16 {HEIGHT / 2})"})):
        if text:
            t = ET.SubElement(svg, "text", x=str(x), y=str(y), attrib={"text-anchor": "middle", **extra})
            t.text = text
    for i, (label, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = sorted(pts)
        ET.SubElement(svg, "polyline", fill="none", stroke=color, attrib={"stroke-width": "2"},
                      points=" ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts))
        t = ET.SubElement(svg, "text", x=str(WIDTH - MARGIN + 4), y=str(MARGIN + 14 * i), fill=color,
                          attrib={"font-size": "11"})
        t.text = label
    path = Path(path)
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    return path
