"""Minimal SVG line plots for prediction-versus-reference overlays."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_plot_svg(x, series: dict, title: str = "", width: int = 900, height: int = 260) -> str:
    """Render named ``y`` series sharing ``x`` as a standalone SVG string."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("nothing to plot")
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    for k, v in ys.items():
        if v.shape != x.shape:
            raise ValueError(f"series {k!r} has {v.size} points, x has {x.size}")
    pad = 40
    lo = min(float(np.nanmin(v)) for v in ys.values())
    hi = max(float(np.nanmax(v)) for v in ys.values())
    if hi == lo:
        hi, lo = hi + 1.0, lo - 1.0
    x0, x1 = float(x.min()), float(x.max()) if x.max() > x.min() else float(x.min()) + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="14">{escape(title)}</text>',
             f'<line x1="{pad}" y1="{py(0.0) if lo <= 0 <= hi else height - pad:.2f}" '
             f'x2="{width - pad}" y2="{py(0.0) if lo <= 0 <= hi else height - pad:.2f}" stroke="#bbb"/>']
    for i, (name, y) in enumerate(ys.items()):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        color = COLORS[i % len(COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 120}" y="{20 + 14 * i}" font-size="12" '
                     f'fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, svg: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
