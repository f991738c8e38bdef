"""Deterministic SVG line plots of error trajectories.

The figure is a grid of panels: one row per lambda value and one column per
metric, with one polyline per flow.  Numbers are written with fixed precision
and all orderings are sorted, so identical inputs give identical bytes.
"""

from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import FormatError
from .experiment import METRICS, Trajectory

PANEL_W = 300
PANEL_H = 220
MARGIN_L = 62
MARGIN_R = 14
MARGIN_T = 30
MARGIN_B = 42
LEGEND_H = 24
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
METRIC_LABELS = {"mean_err": "mean error", "cov_rel_err": "rel. cov error",
                 "cos_err": "cos error"}


def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt_tick(v):
    return f"{v:g}"


class _Panel:
    def __init__(self, x0, y0, log_y, t_range, y_range):
        self.x0, self.y0 = x0, y0
        self.log_y = log_y
        self.t_lo, self.t_hi = t_range
        self.y_lo, self.y_hi = y_range

    def px(self, t):
        w = PANEL_W - MARGIN_L - MARGIN_R
        return self.x0 + MARGIN_L + (t - self.t_lo) / (self.t_hi - self.t_lo) * w

    def py(self, y):
        h = PANEL_H - MARGIN_T - MARGIN_B
        return self.y0 + MARGIN_T + (self.y_hi - y) / (self.y_hi - self.y_lo) * h


def _y_transform(values, log_y, floor):
    if not log_y:
        return list(values)
    return [math.log10(max(v, floor)) for v in values]


def _panel_svg(panel, title, ylabel, series, log_y):
    out = []
    x_left = panel.x0 + MARGIN_L
    x_right = panel.x0 + PANEL_W - MARGIN_R
    y_top = panel.y0 + MARGIN_T
    y_bot = panel.y0 + PANEL_H - MARGIN_B
    out.append(f'<rect x="{_f(x_left)}" y="{_f(y_top)}" width="{_f(x_right - x_left)}" '
               f'height="{_f(y_bot - y_top)}" fill="none" stroke="#000" stroke-width="1"/>')
    out.append(f'<text x="{_f((x_left + x_right) / 2)}" y="{_f(panel.y0 + 18)}" '
               f'text-anchor="middle" font-size="12">{title}</text>')
    for t in _nice_ticks(panel.t_lo, panel.t_hi):
        x = panel.px(t)
        out.append(f'<line x1="{_f(x)}" y1="{_f(y_bot)}" x2="{_f(x)}" y2="{_f(y_bot + 4)}" stroke="#000"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(y_bot + 15)}" text-anchor="middle" '
                   f'font-size="10">{_fmt_tick(t)}</text>')
    if log_y:
        yticks = list(range(math.ceil(panel.y_lo - 1e-9), math.floor(panel.y_hi + 1e-9) + 1))
        labels = [f"1e{k}" for k in yticks]
    else:
        yticks = _nice_ticks(panel.y_lo, panel.y_hi)
        labels = [_fmt_tick(v) for v in yticks]
    for v, lab in zip(yticks, labels):
        y = panel.py(v)
        out.append(f'<line x1="{_f(x_left - 4)}" y1="{_f(y)}" x2="{_f(x_left)}" y2="{_f(y)}" stroke="#000"/>')
        out.append(f'<text x="{_f(x_left - 6)}" y="{_f(y + 3)}" text-anchor="end" '
                   f'font-size="10">{lab}</text>')
    out.append(f'<text x="{_f((x_left + x_right) / 2)}" y="{_f(y_bot + 32)}" '
               f'text-anchor="middle" font-size="11">t</text>')
    cy = (y_top + y_bot) / 2
    cx = panel.x0 + 14
    out.append(f'<text x="{_f(cx)}" y="{_f(cy)}" text-anchor="middle" font-size="11" '
               f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{ylabel}</text>')
    for color, ts, ys in series:
        pts = " ".join(f"{_f(panel.px(t))},{_f(panel.py(y))}" for t, y in zip(ts, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    return out


def load_trajectories(csv_paths: Iterable) -> list:
    paths = sorted(str(p) for p in csv_paths)
    if not paths:
        raise FormatError("no input CSV files")
    return [Trajectory.from_csv(p) for p in paths]


def render_svg(trajs: Sequence[Trajectory], log_y: bool = True,
               metrics: Sequence[str] = METRICS) -> str:
    """SVG text for the panel grid (rows: lambda, columns: metric)."""
    if not trajs:
        raise FormatError("nothing to plot")
    for m in metrics:
        if m not in METRICS:
            raise FormatError(f"unknown metric {m!r}")
    lams = sorted({tr.lam for tr in trajs}, key=lambda v: (v is None, v if v is not None else 0.0))
    flows = sorted({tr.flow for tr in trajs})
    colors = {f: PALETTE[i % len(PALETTE)] for i, f in enumerate(flows)}
    t_lo = min(tr.times.min() for tr in trajs)
    t_hi = max(tr.times.max() for tr in trajs)
    if t_hi <= t_lo:
        t_hi = t_lo + 1.0

    width = PANEL_W * len(metrics)
    height = PANEL_H * len(lams) + LEGEND_H
    body = []
    ordered = sorted(trajs, key=lambda tr: (flows.index(tr.flow), tr.target))
    for r, lam in enumerate(lams):
        row = [tr for tr in ordered if tr.lam == lam]
        for c, metric in enumerate(metrics):
            vals = [v for tr in row for v in tr.metric(metric)]
            if log_y:
                pos = [v for v in vals if v > 0]
                floor = min(pos) if pos else 1e-16
                ys = [math.log10(max(v, floor)) for v in vals]
                y_lo, y_hi = math.floor(min(ys)), math.ceil(max(ys))
            else:
                floor = 0.0
                y_lo, y_hi = min(vals), max(vals)
            if y_hi <= y_lo:
                y_hi = y_lo + 1.0
            panel = _Panel(c * PANEL_W, LEGEND_H + r * PANEL_H, log_y, (t_lo, t_hi), (y_lo, y_hi))
            series = [(colors[tr.flow], tr.times, _y_transform(tr.metric(metric), log_y, floor))
                      for tr in row]
            lam_txt = "" if lam is None else f" (lambda = {lam:g})"
            body += _panel_svg(panel, METRIC_LABELS[metric] + lam_txt, METRIC_LABELS[metric],
                               series, log_y)
    legend = []
    for i, f in enumerate(flows):
        x = 10 + i * 120
        legend.append(f'<line x1="{x}" y1="12" x2="{x + 20}" y2="12" stroke="{colors[f]}" stroke-width="2"/>')
        legend.append(f'<text x="{x + 25}" y="16" font-size="11">{f}</text>')
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">')
    bg = f'<rect x="0" y="0" width="{width}" height="{height}" fill="#fff"/>'
    return "\n".join([head, bg] + legend + body + ["</svg>"]) + "\n"


def emit_plot(csv_paths: Iterable, output, style: str = "log_y",
              metrics: Sequence[str] = METRICS) -> Path:
    """Read trajectory CSVs and write the SVG; nothing is written on a format error."""
    if style not in ("log_y", "linear"):
        raise FormatError(f"unknown plot style {style!r}")
    svg = render_svg(load_trajectories(csv_paths), log_y=(style == "log_y"), metrics=metrics)
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    tmp = output.with_name(output.name + ".tmp")
    tmp.write_text(svg)
    os.replace(tmp, output)
    return output
