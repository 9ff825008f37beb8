"""Static SVG plots from metrics logs, no plotting dependency."""

from __future__ import annotations

import json
from pathlib import Path

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 30, 40


def line_svg(xs, ys, title: str, y_label: str) -> str:
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    points = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{_ML}" y="{_H - 10}" font-size="11">{x_lo:g}</text>',
        f'<text x="{_W - _MR}" y="{_H - 10}" text-anchor="end" font-size="11">{x_hi:g}</text>',
        f'<text x="{_ML - 5}" y="{_H - _MB}" text-anchor="end" font-size="11">{y_lo:.4g}</text>',
        f'<text x="{_ML - 5}" y="{_MT + 10}" text-anchor="end" font-size="11">{y_hi:.4g}</text>',
        f'<text x="15" y="{_H / 2}" font-size="11" transform="rotate(-90 15 {_H / 2})" '
        f'text-anchor="middle">{y_label}</text>',
        f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="1.5"/>',
        "</svg>",
    ]
    return "\n".join(parts)


def metrics_to_svgs(log_path, out_dir) -> list[Path]:
    """One SVG per metric present in a metrics log (success-rate-vs-step,
    loss curves)."""
    log_path = Path(log_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
    written = []
    keys = sorted({k for row in rows for k in row if k != "step"})
    for key in keys:
        pts = [(row["step"], row[key]) for row in rows if key in row]
        if len(pts) < 1:
            continue
        xs, ys = zip(*pts)
        svg = line_svg(xs, ys, f"{key} vs step", key)
        path = out_dir / f"{key}.svg"
        path.write_text(svg)
        written.append(path)
    return written
