"""Minimal self-contained SVG plots (lines and heatmaps), no plotting deps.

Each file embeds its data points in a <metadata> block so a plot is also a
machine-readable record of what it shows.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 55
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2g}"
    return f"{v:.3g}"


def _esc(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def line_plot(path: str | Path, series: dict[str, tuple[np.ndarray, np.ndarray]],
              title: str, xlabel: str, ylabel: str,
              markers: bool = False) -> None:
    """Write a multi-series line plot; series maps label -> (xs, ys)."""
    xs_all = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v): return _ML + (v - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)
    def sy(v): return _H - _MB - (v - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{_H}" viewBox="0 0 {_W} {_H}">',
             '<metadata>' + _esc(json.dumps(
                 {label: {"x": list(map(float, x)), "y": list(map(float, y))}
                  for label, (x, y) in series.items()})) + '</metadata>',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W/2}" y="24" text-anchor="middle" '
             f'font-family="sans-serif" font-size="15">{_esc(title)}</text>']

    # axes and ticks
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{_W-_ML-_MR}" '
                 f'height="{_H-_MT-_MB}" fill="none" stroke="#333"/>')
    for v in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(v):.1f}" y1="{_H-_MB}" x2="{sx(v):.1f}" '
                     f'y2="{_H-_MB+5}" stroke="#333"/>')
        parts.append(f'<text x="{sx(v):.1f}" y="{_H-_MB+18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    for v in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{_ML-5}" y1="{sy(v):.1f}" x2="{_ML}" '
                     f'y2="{sy(v):.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_ML-8}" y="{sy(v):.1f}" text-anchor="end" '
                     f'dominant-baseline="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(v)}</text>')
    parts.append(f'<text x="{_W/2}" y="{_H-12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{_esc(xlabel)}</text>')
    parts.append(f'<text x="18" y="{_H/2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {_H/2})">{_esc(ylabel)}</text>')

    for idx, (label, (x, y)) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        pts = " ".join(f"{sx(float(a)):.1f},{sy(float(b)):.1f}"
                       for a, b in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        if markers:
            for a, b in zip(x, y):
                parts.append(f'<circle cx="{sx(float(a)):.1f}" '
                             f'cy="{sy(float(b)):.1f}" r="3" fill="{color}"/>')
        parts.append(f'<rect x="{_W-_MR-150}" y="{_MT+8+16*idx}" width="12" '
                     f'height="3" fill="{color}"/>')
        parts.append(f'<text x="{_W-_MR-132}" y="{_MT+14+16*idx}" '
                     f'font-family="sans-serif" font-size="11">{_esc(label)}</text>')

    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _viridis(v: float) -> str:
    stops = [(0.267, 0.005, 0.329), (0.283, 0.141, 0.458), (0.254, 0.265, 0.530),
             (0.164, 0.471, 0.558), (0.128, 0.567, 0.551), (0.135, 0.659, 0.518),
             (0.267, 0.749, 0.441), (0.478, 0.821, 0.318), (0.741, 0.873, 0.150),
             (0.993, 0.906, 0.144)]
    v = min(max(v, 0.0), 1.0) * (len(stops) - 1)
    i = int(v)
    f = v - i
    j = min(i + 1, len(stops) - 1)
    r, g, b = [stops[i][c] + f * (stops[j][c] - stops[i][c]) for c in range(3)]
    return f"#{int(r*255):02x}{int(g*255):02x}{int(b*255):02x}"


def heatmap(path: str | Path, matrix: np.ndarray, title: str,
            xlabel: str, ylabel: str) -> None:
    """Write a dense heatmap; rows render top to bottom."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    lo, hi = float(m.min()), float(m.max())
    span = hi - lo if hi > lo else 1.0
    cw = (_W - _ML - _MR) / cols
    ch = (_H - _MT - _MB) / rows
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{_H}" viewBox="0 0 {_W} {_H}">',
             '<metadata>' + _esc(json.dumps({"matrix": m.tolist()})) + '</metadata>',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W/2}" y="24" text-anchor="middle" '
             f'font-family="sans-serif" font-size="15">{_esc(title)}</text>']
    for i in range(rows):
        for j in range(cols):
            color = _viridis((m[i, j] - lo) / span)
            parts.append(f'<rect x="{_ML + j*cw:.2f}" y="{_MT + i*ch:.2f}" '
                         f'width="{cw+0.5:.2f}" height="{ch+0.5:.2f}" '
                         f'fill="{color}"/>')
    parts.append(f'<text x="{_W/2}" y="{_H-12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{_esc(xlabel)}</text>')
    parts.append(f'<text x="18" y="{_H/2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {_H/2})">{_esc(ylabel)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
