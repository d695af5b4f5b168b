"""Minimal SVG polyline plots and reproducibility metadata.

CSVs are the contract for every experiment; the SVG emitter is a
convenience renderer over the same series so results can be eyeballed
without a plotting stack.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from . import __version__
from .errors import InputError

__all__ = ["line_plot_svg", "config_hash", "write_run_manifest"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 720, 460
_ML, _MR, _MT, _MB = 70, 20, 40, 55  # margins: left, right, top, bottom


def _ticks(lo: float, hi: float, count: int = 6):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / count))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(t)
        t += step
    return ticks


def line_plot_svg(path, series: dict, title: str, xlabel: str, ylabel: str,
                  logy: bool = False) -> None:
    """Write a line plot; `series` maps label -> (xs, ys)."""
    if not series:
        raise InputError("no series to plot")
    xs_all, ys_all = [], []
    for label, (xs, ys) in series.items():
        if len(xs) != len(ys) or not len(xs):
            raise InputError(f"series {label!r} is empty or mismatched")
        xs_all.extend(float(v) for v in xs)
        for v in ys:
            v = float(v)
            if logy and v <= 0:
                continue
            ys_all.append(math.log10(v) if logy else v)
    if not ys_all:
        raise InputError("no positive values to plot on a log axis")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="22" text-anchor="middle" '
        f'font-size="15">{title}</text>',
    ]
    axis = (f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
            f'stroke="black"/>'
            f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
            f'stroke="black"/>')
    parts.append(axis)
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.1f}" y1="{_H - _MB}" x2="{px(t):.1f}" '
                     f'y2="{_H - _MB + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{_H - _MB + 20}" '
                     f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        label = f"1e{t:g}" if logy else f"{t:g}"
        parts.append(f'<line x1="{_ML - 5}" y1="{py(t):.1f}" x2="{_ML}" '
                     f'y2="{py(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py(t):.1f}" text-anchor="end" '
                     f'dominant-baseline="middle">{label}</text>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 12}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="18" y="{(_MT + _H - _MB) / 2:.0f}" '
                 f'text-anchor="middle" transform="rotate(-90 18 '
                 f'{(_MT + _H - _MB) / 2:.0f})">{ylabel}</text>')

    for idx, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        points = []
        for x, y in zip(xs, ys):
            y = float(y)
            if logy:
                if y <= 0:
                    continue
                y = math.log10(y)
            points.append(f"{px(float(x)):.1f},{py(y):.1f}")
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{" ".join(points)}"/>')
        ly = _MT + 16 * idx
        parts.append(f'<line x1="{_W - _MR - 130}" y1="{ly}" '
                     f'x2="{_W - _MR - 105}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 100}" y="{ly + 4}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def config_hash(config: dict) -> str:
    """Stable short hash of a configuration document."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_run_manifest(out_dir, config: dict, seeds: dict,
                       outputs: list, timestamp: str | None = None) -> Path:
    """run.json: config hash + echo, seeds, artifact version, output files.

    The optional timestamp is the only non-deterministic field; repeat
    runs with identical config differ in nothing else.
    """
    manifest = {
        "artifact_version": __version__,
        "config_hash": config_hash(config),
        "config": config,
        "seeds": seeds,
        "outputs": sorted(str(o) for o in outputs),
    }
    if timestamp is not None:
        manifest["timestamp"] = timestamp
    path = Path(out_dir) / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str)
                    + "\n")
    return path
