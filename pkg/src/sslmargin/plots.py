"""Static SVG line charts for metrics, comparison and ledger CSVs.

Output is a pure function of the input rows, so identical CSVs give
byte-identical files.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

KINDS = ("error_curve", "mask_impurity", "apm_trace")
REQUIRED = {
    "error_curve": ("epoch", "method", "test_error"),
    "mask_impurity": ("epoch", "method", "mask_rate", "impurity"),
    "apm_trace": ("id", "epoch", "gamma"),
}
_APM_COL = re.compile(r"^apm_(\d+)$")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class PlotInputError(ValueError):
    """The CSV does not fit the requested chart kind."""


@dataclass
class Series:
    label: str
    xs: List[float]
    ys: List[float]
    dashed: bool = False


def nice_ticks(lo: float, hi: float, target: int = 5) -> List[float]:
    """Round tick positions bracketing [lo, hi] with steps of 1, 2 or 5 times 10^k."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.floor(lo / step + 1e-9)
    last = math.ceil(hi / step - 1e-9)
    return [round(k * step, 12) for k in range(first, last + 1)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:g}"


def line_chart(
    series: Sequence[Series],
    title: str,
    xlabel: str,
    ylabel: str,
    width: int = 640,
    height: int = 400,
) -> str:
    left, right, top, bottom = 64, 150, 36, 48
    pw, ph = width - left - right, height - top - bottom
    pts = [(x, y) for s in series for x, y in zip(s.xs, s.ys) if math.isfinite(y)]
    if pts:
        x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
        y_lo, y_hi = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    xt, yt = nice_ticks(x_lo, x_hi), nice_ticks(y_lo, y_hi)
    x_lo, x_hi = min(xt[0], x_lo), max(xt[-1], x_hi)
    y_lo, y_hi = min(yt[0], y_lo), max(yt[-1], y_hi)

    def sx(x: float) -> float:
        return left + (x - x_lo) / ((x_hi - x_lo) or 1.0) * pw

    def sy(y: float) -> float:
        return top + ph - (y - y_lo) / ((y_hi - y_lo) or 1.0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        '<g class="axes" stroke="black" stroke-width="1">',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/>',
        "</g>",
        '<g class="ticks">',
    ]
    for t in xt:
        x = sx(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{top + ph + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in yt:
        y = sy(t)
        out.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left + pw}" y2="{_fmt(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append("</g>")
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    out.append('<g class="series" fill="none" stroke-width="1.5">')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="5 3"' if s.dashed else ""
        path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(s.xs, s.ys) if math.isfinite(y))
        if path:
            out.append(f'<polyline stroke="{color}"{dash} points="{path}"/>')
    out.append("</g>")
    out.append('<g class="legend">')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        y = top + 10 + 16 * i
        dash = ' stroke-dasharray="5 3"' if s.dashed else ""
        out.append(
            f'<line x1="{left + pw + 12}" y1="{y}" x2="{left + pw + 32}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>'
        )
        out.append(f'<text x="{left + pw + 38}" y="{y + 4}">{escape(s.label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def check_columns(kind: str, header: Sequence[str]) -> None:
    if kind not in REQUIRED:
        raise PlotInputError(f"unknown chart kind {kind!r}; expected one of {KINDS}")
    missing = [c for c in REQUIRED[kind] if c not in header]
    if kind == "apm_trace" and not any(_APM_COL.match(h) for h in header):
        missing.append("apm_<class>")
    if missing:
        raise PlotInputError(f"missing columns for {kind}: {', '.join(missing)}")


def _num(raw: str) -> float:
    return float(raw) if raw not in ("", None) else math.nan


def _mean_by_epoch(rows: List[Dict[str, str]], column: str) -> Tuple[List[float], List[float]]:
    acc: Dict[float, List[float]] = defaultdict(list)
    for r in rows:
        v = _num(r[column])
        if math.isfinite(v):
            acc[float(r["epoch"])].append(v)
    xs = sorted(acc)
    return xs, [sum(acc[x]) / len(acc[x]) for x in xs]


def _by_method(rows: List[Dict[str, str]]) -> Dict[str, List[Dict[str, str]]]:
    groups: Dict[str, List[Dict[str, str]]] = defaultdict(list)
    for r in rows:
        groups[r["method"]].append(r)
    return dict(sorted(groups.items()))


def series_for(kind: str, rows: List[Dict[str, str]], example_id: Optional[int] = None) -> List[Series]:
    """Build chart series; error and mask charts average over seeds per epoch."""
    if kind == "error_curve":
        out = []
        for method, group in _by_method(rows).items():
            xs, ys = _mean_by_epoch(group, "test_error")
            out.append(Series(method, xs, ys))
        return out
    if kind == "mask_impurity":
        out = []
        for method, group in _by_method(rows).items():
            xs, ys = _mean_by_epoch(group, "mask_rate")
            out.append(Series(f"{method} mask rate", xs, ys))
            xs, ys = _mean_by_epoch(group, "impurity")
            out.append(Series(f"{method} impurity", xs, ys, dashed=True))
        return out
    if kind == "apm_trace":
        if example_id is None:
            raise PlotInputError("apm_trace needs an example id")
        mine = sorted((r for r in rows if int(r["id"]) == example_id), key=lambda r: int(r["epoch"]))
        if not mine:
            raise PlotInputError(f"example id {example_id} was never tracked")
        apm_cols = sorted((c for c in rows[0] if _APM_COL.match(c)), key=lambda c: int(c[4:]))
        xs = [float(r["epoch"]) for r in mine]
        out = [Series(f"APM class {c.split('_')[1]}", xs, [_num(r[c]) for r in mine]) for c in apm_cols]
        out.append(Series("gamma", xs, [_num(r["gamma"]) for r in mine], dashed=True))
        return out
    raise PlotInputError(f"unknown chart kind {kind!r}")


TITLES = {
    "error_curve": ("Test error", "epoch", "test error"),
    "mask_impurity": ("Mask rate and impurity", "epoch", "fraction"),
    "apm_trace": ("Accumulated margins", "epoch", "APM"),
}


def render(kind: str, header: Sequence[str], rows: List[Dict[str, str]], example_id: Optional[int] = None) -> str:
    check_columns(kind, header)
    title, xl, yl = TITLES[kind]
    if kind == "apm_trace":
        title = f"{title}, example {example_id}"
    return line_chart(series_for(kind, rows, example_id), title, xl, yl)
