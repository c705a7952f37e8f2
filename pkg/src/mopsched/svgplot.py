"""Minimal SVG charts: polylines, steps, and bars with plain axes.

The CSV/JSON artifacts are the contract; these plots are reading aids, so a
tiny hand-rolled renderer beats a plotting dependency.  Output is fully
deterministic (fixed float formatting, no timestamps).
"""

from __future__ import annotations

import math

_W, _H = 720, 360
_ML, _MR, _MT, _MB = 64, 16, 28, 44
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(t)
        t += step
    return out


class _Canvas:
    def __init__(self, title, xlabel, ylabel, xlim, ylim):
        self.parts = []
        self.xlim, self.ylim = xlim, ylim
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">'
        )
        self.parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
        self.parts.append(
            f'<text x="{_W / 2}" y="16" text-anchor="middle" font-size="13">{title}</text>'
        )
        self.parts.append(
            f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle">{xlabel}</text>'
        )
        self.parts.append(
            f'<text x="14" y="{_H / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {_H / 2})">{ylabel}</text>'
        )
        self._axes()

    def x(self, v):
        lo, hi = self.xlim
        return _ML + (v - lo) / (hi - lo) * (_W - _ML - _MR)

    def y(self, v):
        lo, hi = self.ylim
        return _H - _MB - (v - lo) / (hi - lo) * (_H - _MT - _MB)

    def _axes(self):
        x0, x1 = _ML, _W - _MR
        y0, y1 = _H - _MB, _MT
        self.parts.append(
            f'<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" stroke="black" fill="none"/>'
        )
        for t in _ticks(*self.xlim):
            px = self.x(t)
            self.parts.append(
                f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 4}" stroke="black"/>'
            )
            self.parts.append(
                f'<text x="{_fmt(px)}" y="{y0 + 16}" text-anchor="middle">{_fmt(t)}</text>'
            )
        for t in _ticks(*self.ylim):
            py = self.y(t)
            self.parts.append(
                f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" stroke="black"/>'
            )
            self.parts.append(
                f'<text x="{x0 - 6}" y="{_fmt(py + 3)}" text-anchor="end">{_fmt(t)}</text>'
            )

    def polyline(self, xs, ys, color, label=None, step=False):
        pts = []
        prev = None
        for xv, yv in zip(xs, ys):
            if not (math.isfinite(xv) and math.isfinite(yv)):
                prev = None
                continue
            if step and prev is not None:
                pts.append(f"{_fmt(self.x(xv))},{_fmt(self.y(prev))}")
            pts.append(f"{_fmt(self.x(xv))},{_fmt(self.y(yv))}")
            prev = yv
        if pts:
            self.parts.append(
                f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.3"/>'
            )

    def bar(self, xv, yv, width, color):
        x0 = self.x(xv - width / 2)
        x1 = self.x(xv + width / 2)
        y0 = self.y(max(self.ylim[0], 0.0))
        y1 = self.y(yv)
        self.parts.append(
            f'<rect x="{_fmt(x0)}" y="{_fmt(min(y0, y1))}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(abs(y0 - y1))}" fill="{color}" stroke="black" stroke-width="0.5"/>'
        )

    def legend(self, labels):
        for i, (label, color) in enumerate(labels):
            ly = _MT + 6 + 14 * i
            self.parts.append(
                f'<line x1="{_W - _MR - 130}" y1="{ly}" x2="{_W - _MR - 110}" y2="{ly}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            self.parts.append(f'<text x="{_W - _MR - 104}" y="{ly + 3}">{label}</text>')

    def save(self, path):
        self.parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _finite_range(arrays, pad=0.05):
    vals = [v for arr in arrays for v in arr if math.isfinite(v)]
    if not vals:
        return (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if hi == lo:
        hi = lo + 1.0
    span = hi - lo
    return lo - pad * span, hi + pad * span


def line_chart(path, series, title, xlabel, ylabel, step=False, ymin=None):
    """series: list of (label, xs, ys)."""
    xlim = _finite_range([xs for _, xs, _ in series], pad=0.0)
    ylo, yhi = _finite_range([ys for _, _, ys in series])
    if ymin is not None:
        ylo = min(ymin, ylo)
    canvas = _Canvas(title, xlabel, ylabel, xlim, (ylo, yhi))
    labels = []
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        canvas.polyline(xs, ys, color, step=step)
        labels.append((label, color))
    if len(labels) > 1 or (labels and labels[0][0]):
        canvas.legend(labels)
    canvas.save(path)


def bar_chart(path, labels, values, title, xlabel, ylabel):
    xlim = (-0.6, len(labels) - 0.4)
    ylo, yhi = 0.0, max(list(values) + [1.0]) * 1.1
    canvas = _Canvas(title, xlabel, ylabel, xlim, (ylo, yhi))
    for i, v in enumerate(values):
        canvas.bar(i, v, 0.7, _COLORS[0])
    y0 = canvas.y(0) + 16
    for i, label in enumerate(labels):
        canvas.parts.append(
            f'<text x="{_fmt(canvas.x(i))}" y="{y0}" text-anchor="middle">{label}</text>'
        )
    canvas.save(path)
