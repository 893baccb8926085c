"""Minimal self-contained SVG plots: line charts and box plots.

Coordinates are printed with fixed precision so identical inputs give
identical bytes.
"""
from __future__ import annotations

import math
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xs, ys, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        tx = self._tx(np.asarray(xs, dtype=float))
        ty = self._ty(np.asarray(ys, dtype=float))
        self.x0, self.x1 = _pad(np.nanmin(tx), np.nanmax(tx))
        self.y0, self.y1 = _pad(np.nanmin(ty), np.nanmax(ty))
        self.left = MARGIN["left"]
        self.right = WIDTH - MARGIN["right"]
        self.top = MARGIN["top"]
        self.bottom = HEIGHT - MARGIN["bottom"]

    def _tx(self, x):
        return np.log10(x) if self.logx else x

    def _ty(self, y):
        return np.log10(y) if self.logy else y

    def px(self, x):
        t = self._tx(np.asarray(x, dtype=float))
        return self.left + (t - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y):
        t = self._ty(np.asarray(y, dtype=float))
        return self.bottom - (t - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)

    def frame(self, title, xlabel, ylabel) -> list[str]:
        out = [f'<rect x="{self.left}" y="{self.top}" width="{self.right - self.left}" '
               f'height="{self.bottom - self.top}" fill="none" stroke="#333"/>']
        for i in range(5):
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            y = self.bottom - (self.bottom - self.top) * i / 4
            label = f"1e{fy:.1f}" if self.logy else f"{fy:.3g}"
            out.append(f'<text x="{self.left - 6}" y="{_f(y + 4)}" font-size="10" text-anchor="end">{label}</text>')
        out.append(f'<text x="{WIDTH / 2:.0f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
        out.append(f'<text x="{(self.left + self.right) / 2:.0f}" y="{HEIGHT - 12}" font-size="12" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="16" y="{(self.top + self.bottom) / 2:.0f}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(self.top + self.bottom) / 2:.0f})">{escape(ylabel)}</text>')
        return out


def _pad(lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if lo == hi:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - 0.04 * span, hi + 0.04 * span


def _document(body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>', *body, "</svg>"]) + "\n"


def line_plot(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], path, title: str = "",
              xlabel: str = "", ylabel: str = "", logx: bool = False, logy: bool = False) -> Path:
    """One polyline per ``(name, xs, ys)`` series, with a legend on the right."""
    if not series:
        raise ValueError("nothing to plot")
    all_x = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    all_y = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    ax = _Axes(all_x, all_y, logx, logy)
    body = ax.frame(title, xlabel, ylabel)
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(ax.px(xs), ax.py(ys)))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{pts}"/>')
        ly = MARGIN["top"] + 16 * i + 8
        body.append(f'<line x1="{ax.right + 10}" y1="{ly}" x2="{ax.right + 30}" y2="{ly}" stroke="{color}" '
                    f'stroke-width="2"/>')
        body.append(f'<text x="{ax.right + 34}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    path = Path(path)
    path.write_text(_document(body), encoding="utf-8")
    return path


def box_plot(groups: Sequence[tuple[str, Sequence[float]]], path, title: str = "", ylabel: str = "") -> Path:
    """Quartile boxes with whiskers at the extremes, one per labelled group."""
    if not groups:
        raise ValueError("nothing to plot")
    values = [np.asarray(v, dtype=float) for _, v in groups]
    allv = np.concatenate(values)
    ax = _Axes([0, len(groups) + 1], allv)
    body = ax.frame(title, "", ylabel)
    step = (ax.right - ax.left) / (len(groups) + 1)
    half = min(18.0, step / 3)
    for i, ((label, _), v) in enumerate(zip(groups, values)):
        cx = ax.left + step * (i + 1)
        q0, q1, q2, q3, q4 = np.quantile(v, [0, 0.25, 0.5, 0.75, 1])
        y0, y1, y2, y3, y4 = (float(ax.py(q)) for q in (q0, q1, q2, q3, q4))
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<line x1="{_f(cx)}" y1="{_f(y0)}" x2="{_f(cx)}" y2="{_f(y4)}" stroke="#333"/>')
        body.append(f'<rect x="{_f(cx - half)}" y="{_f(y3)}" width="{_f(2 * half)}" height="{_f(y1 - y3)}" '
                    f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>')
        body.append(f'<line x1="{_f(cx - half)}" y1="{_f(y2)}" x2="{_f(cx + half)}" y2="{_f(y2)}" '
                    f'stroke="#000" stroke-width="2"/>')
        body.append(f'<text x="{_f(cx)}" y="{ax.bottom + 16}" font-size="10" text-anchor="middle">'
                    f'{escape(str(label))}</text>')
    path = Path(path)
    path.write_text(_document(body), encoding="utf-8")
    return path
