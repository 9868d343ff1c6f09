"""Tiny static SVG line charts (no external assets, no scripts)."""

from __future__ import annotations

from datetime import date
from html import escape
from typing import Mapping, Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")

Series = Sequence[tuple[date, float | None]]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000:
        return f"{v:,.0f}"
    if abs(v) >= 1:
        return f"{v:.4g}"
    return f"{v:.3g}"


def _panel(series: Mapping[str, Series], x0: float, y0: float, w: float, h: float, title: str,
           y_label: str, legend: bool = True) -> list[str]:
    out = [f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8:.1f}" text-anchor="middle" font-size="13" '
           f'font-weight="bold">{escape(title)}</text>']
    days = sorted({d for s in series.values() for d, _ in s})
    values = [v for s in series.values() for _, v in s if v is not None]
    out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>')
    if not days or not values:
        return out
    lo, hi = min(0.0, min(values)), max(values)
    if hi == lo:
        hi = lo + 1
    d0, span = days[0].toordinal(), max(days[-1].toordinal() - days[0].toordinal(), 1)

    def px(d: date) -> float:
        return x0 + (d.toordinal() - d0) / span * w

    def py(v: float) -> float:
        return y0 + h - (v - lo) / (hi - lo) * h

    for frac in (0, 0.5, 1):
        v = lo + frac * (hi - lo)
        out.append(f'<text x="{x0 - 4}" y="{py(v) + 4:.1f}" text-anchor="end" font-size="10">{_fmt(v)}</text>')
    out.append(f'<text x="{x0}" y="{y0 + h + 14}" font-size="10">{days[0].isoformat()}</text>')
    out.append(f'<text x="{x0 + w}" y="{y0 + h + 14}" text-anchor="end" font-size="10">{days[-1].isoformat()}</text>')
    out.append(f'<text x="{x0 - 40}" y="{y0 + h / 2}" font-size="10" transform="rotate(-90 {x0 - 40} {y0 + h / 2})" '
               f'text-anchor="middle">{escape(y_label)}</text>')
    for k, (name, s) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        # undefined values break the line instead of dropping to zero
        runs, run = [], []
        for d, v in sorted(s, key=lambda dv: dv[0]):
            if v is None:
                if run:
                    runs.append(run)
                run = []
            else:
                run.append(f"{px(d):.1f},{py(v):.1f}")
        if run:
            runs.append(run)
        for r in runs:
            if len(r) == 1:
                x, y = r[0].split(",")
                out.append(f'<circle cx="{x}" cy="{y}" r="1.5" fill="{colour}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{" ".join(r)}"/>')
        if legend:
            ly = y0 + 12 + 13 * k
            out.append(f'<rect x="{x0 + w + 10}" y="{ly - 8}" width="10" height="10" fill="{colour}"/>')
            out.append(f'<text x="{x0 + w + 24}" y="{ly + 1}" font-size="10">{escape(name)}</text>')
    return out


def _document(width: int, height: int, body: list[str]) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def line_chart(series: Mapping[str, Series], title: str, y_label: str = "") -> str:
    return _document(980, 420, _panel(series, 70, 40, 720, 330, title, y_label))


def grid_chart(panels: Mapping[str, Mapping[str, Series]], title: str, y_label: str = "", columns: int = 2) -> str:
    """Small multiples, one panel per key (e.g. per organisation)."""
    pw, ph = 380, 180
    rows = (len(panels) + columns - 1) // columns
    width = columns * (pw + 190) + 40
    height = rows * (ph + 70) + 60
    body = [f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15" font-weight="bold">{escape(title)}</text>']
    for k, (name, series) in enumerate(panels.items()):
        r, c = divmod(k, columns)
        body += _panel(series, 70 + c * (pw + 190), 60 + r * (ph + 70), pw, ph, name, y_label)
    return _document(width, height, body)
