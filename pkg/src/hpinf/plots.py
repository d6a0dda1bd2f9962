"""Dependency-free SVG line plots for convergence traces and recall curves."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np

from .fileio import atomic_write
from .hyperpower import ConvergenceTrace

WIDTH, HEIGHT = 720, 440
MARGIN = dict(left=80, right=190, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")

Series = Union[ConvergenceTrace, Sequence[float], np.ndarray]


def _finite_prefix(ys, log_y):
    """Points up to the first non-finite (or non-positive on a log axis) value."""
    out = []
    for y in ys:
        y = float(y)
        if not math.isfinite(y) or (log_y and y <= 0):
            break
        out.append(y)
    return out


def _ticks_linear(lo, hi, count=5):
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_plot(series: Mapping[str, Series], path, *, log_y: Optional[bool] = None,
                x: Optional[Sequence[float]] = None, title: str = "", x_label: str = "iteration",
                y_label: str = "") -> Path:
    """Write a standalone SVG line plot of ``series`` (label -> trace or y values).

    ``log_y`` defaults to True when every series is a ConvergenceTrace. A
    trace flagged ``diverged`` is drawn up to its last finite point and
    marked with a cross; its legend entry says so.
    """
    if not series:
        raise ValueError("render_plot needs at least one series")
    if log_y is None:
        log_y = all(isinstance(s, ConvergenceTrace) for s in series.values())
    lines = []
    for label, s in series.items():
        if isinstance(s, ConvergenceTrace):
            ys, diverged = list(s.per_iteration_error), s.diverged
        else:
            ys, diverged = [float(v) for v in np.asarray(s, dtype=float).ravel()], False
        if not ys:
            raise ValueError(f"series {label!r} is empty")
        xs = list(x) if x is not None else list(range(1, len(ys) + 1))
        if len(xs) != len(ys):
            raise ValueError(f"series {label!r} has {len(ys)} points for {len(xs)} x values")
        shown = _finite_prefix(ys, log_y)
        diverged = diverged or len(shown) < len(ys)
        lines.append((label, xs[:len(shown)], shown, diverged))
    if not any(pts for _, _, pts, _ in lines):
        raise ValueError("no plottable points")

    all_x = [v for _, xs, _, _ in lines for v in xs]
    all_y = [v for _, _, ys, _ in lines for v in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if log_y:
        y_lo = math.floor(math.log10(min(all_y)))
        y_hi = math.ceil(math.log10(max(all_y)))
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 1, y_hi + 1
        ty = lambda v: math.log10(v)  # noqa: E731
    else:
        y_lo, y_hi = min(all_y + [0.0]), max(all_y)
        if y_hi == y_lo:
            y_hi = y_lo + 1
        ty = lambda v: v  # noqa: E731

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + pw * (v - x_lo) / (x_hi - x_lo)

    def py(v):
        return MARGIN["top"] + ph * (1 - (ty(v) - y_lo) / (y_hi - y_lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">'
                   f'{escape(title)}</text>')
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}"/>'
               f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}"/></g>')

    for v in _ticks_linear(x_lo, x_hi):
        out.append(f'<text x="{px(v):.1f}" y="{y0 + 18}" text-anchor="middle">{v:g}</text>')
    if log_y:
        step = max(1, (y_hi - y_lo) // 8)
        yticks = [10.0 ** e for e in range(y_lo, y_hi + 1, step)]
        labels = [f"1e{int(round(math.log10(t)))}" for t in yticks]
    else:
        yticks = _ticks_linear(y_lo, y_hi)
        labels = [f"{t:.3g}" for t in yticks]
    for t, lab in zip(yticks, labels):
        yy = py(t)
        out.append(f'<line x1="{x0 - 4}" y1="{yy:.1f}" x2="{x0}" y2="{yy:.1f}" stroke="black"/>'
                   f'<text x="{x0 - 7}" y="{yy + 4:.1f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(x_label)}</text>')
    if y_label:
        out.append(f'<text transform="translate(18 {MARGIN["top"] + ph / 2:.1f}) rotate(-90)" '
                   f'text-anchor="middle">{escape(y_label)}</text>')

    for i, (label, xs, ys, diverged) in enumerate(lines):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ys))
        out.append(f'<polyline class="series" data-label="{escape(label, {chr(34): "&quot;"})}" '
                   f'fill="none" stroke="{color}" stroke-width="1.8" points="{pts}"/>')
        if diverged and xs:
            cx, cy = px(xs[-1]), py(ys[-1])
            out.append(f'<path class="diverged" d="M{cx - 5:.1f},{cy - 5:.1f} L{cx + 5:.1f},{cy + 5:.1f} '
                       f'M{cx - 5:.1f},{cy + 5:.1f} L{cx + 5:.1f},{cy - 5:.1f}" stroke="{color}" '
                       f'stroke-width="2.2"/>')
        ly = MARGIN["top"] + 10 + 20 * i
        lx = WIDTH - MARGIN["right"] + 15
        text = label + (" (diverged)" if diverged else "")
        out.append(f'<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="3"/><text x="{lx + 28}" y="{ly + 4}">'
                   f'{escape(text)}</text></g>')
    out.append("</svg>\n")

    path = Path(path)
    atomic_write(path, "\n".join(out).encode())
    return path
