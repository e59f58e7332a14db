"""CSV exports and dependency-free SVG plots.

All numbers are written with fixed formatting so identical inputs give
identical bytes.
"""
from __future__ import annotations

import csv
import io
from html import escape
from typing import Iterable, Sequence

from . import __version__
from .bench import AccuracyCurve, AUACScore, EnergyComparison, RankingTable

PANEL_W, PANEL_H = 260.0, 180.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 44.0, 12.0, 26.0, 34.0
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
SERIES_COLORS = {"input": "#1f77b4", "target": "#2ca02c", "output": "#d62728"}


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def curves_csv(curves: Sequence[AccuracyCurve]) -> str:
    rows = [
        (c.dataset, c.model, x, m, s)
        for c in curves
        for x, m, s in zip(c.bin_centers, c.mean_acc, c.std_acc)
    ]
    return _csv_text(("dataset", "model", "bin_center", "mean_acc", "std_acc"), rows)


def auac_csv(scores: Sequence[AUACScore]) -> str:
    rows = [(s.dataset, s.model, s.range, s.value) for s in scores]
    return _csv_text(("dataset", "model", "range", "normalized_auac"), rows)


def ranking_csv(table: RankingTable, label: str = "full") -> str:
    rows = []
    for m in table.order():
        rows.append((label, m, *[table.ranks[d][m] for d in table.datasets], table.avg_rank[m], table.std_rank[m]))
    return _csv_text(("range", "model", *table.datasets, "avg_rank", "std_rank"), rows)


class _Axes:
    def __init__(self, ox: float, oy: float, xlim=(0.0, 2.0), ylim=(0.0, 1.0)):
        self.x0 = ox + MARGIN_L
        self.x1 = ox + PANEL_W - MARGIN_R
        self.y0 = oy + PANEL_H - MARGIN_B
        self.y1 = oy + MARGIN_T
        self.xlim, self.ylim = xlim, ylim

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        y = min(max(y, lo), hi)
        return self.y0 - (y - lo) / (hi - lo) * (self.y0 - self.y1)

    def frame(self, title: str, xlabel: str, ylabel: str, xticks, yticks) -> list[str]:
        out = [
            f'<rect x="{_f(self.x0)}" y="{_f(self.y1)}" width="{_f(self.x1 - self.x0)}" '
            f'height="{_f(self.y0 - self.y1)}" fill="none" stroke="#444" stroke-width="0.8"/>'
        ]
        for t in xticks:
            x = self.px(t)
            out.append(f'<line x1="{_f(x)}" y1="{_f(self.y0)}" x2="{_f(x)}" y2="{_f(self.y0 + 3)}" stroke="#444"/>')
            out.append(f'<text x="{_f(x)}" y="{_f(self.y0 + 13)}" text-anchor="middle">{t:g}</text>')
        for t in yticks:
            y = self.py(t)
            out.append(f'<line x1="{_f(self.x0 - 3)}" y1="{_f(y)}" x2="{_f(self.x0)}" y2="{_f(y)}" stroke="#444"/>')
            out.append(f'<text x="{_f(self.x0 - 5)}" y="{_f(y + 3)}" text-anchor="end">{t:g}</text>')
        cx = (self.x0 + self.x1) / 2
        out.append(f'<text x="{_f(cx)}" y="{_f(self.y1 - 8)}" text-anchor="middle" font-weight="bold">{escape(title)}</text>')
        out.append(f'<text x="{_f(cx)}" y="{_f(self.y0 + 27)}" text-anchor="middle">{escape(xlabel)}</text>')
        ly = (self.y0 + self.y1) / 2
        lx = self.x0 - 32
        out.append(
            f'<text x="{_f(lx)}" y="{_f(ly)}" text-anchor="middle" transform="rotate(-90 {_f(lx)} {_f(ly)})">{escape(ylabel)}</text>'
        )
        return out


def _document(width: float, height: float, body: list[str], meta: dict) -> str:
    meta_txt = " ".join(f"{k}={escape(str(v))}" for k, v in sorted(meta.items()))
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="9">\n'
        f"<desc>specbench {__version__} {meta_txt}</desc>\n"
        f'<rect width="100%" height="100%" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _curve_marks(ax: _Axes, c: AccuracyCurve, color: str) -> list[str]:
    out = []
    for seg in c.segments():
        xs = [c.bin_centers[i] for i in seg]
        lo = [c.mean_acc[i] - c.std_acc[i] for i in seg]
        hi = [c.mean_acc[i] + c.std_acc[i] for i in seg]
        if len(seg) > 1:
            band = [(ax.px(x), ax.py(y)) for x, y in zip(xs, hi)]
            band += [(ax.px(x), ax.py(y)) for x, y in reversed(list(zip(xs, lo)))]
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in band)
            out.append(f'<polygon class="band" points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_f(ax.px(x))},{_f(ax.py(c.mean_acc[i]))}" for x, i in zip(xs, seg))
        out.append(f'<polyline class="mean" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, i in zip(xs, seg):
            out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(c.mean_acc[i]))}" r="1.8" fill="{color}"/>')
    return out


def render_curves(curves: Sequence[AccuracyCurve], layout: str = "panels", columns: int = 3,
                  meta: dict | None = None) -> str:
    """Accuracy against frequency with a ±1 std band.

    ``layout="panels"`` draws one panel per (dataset, model); ``"overlay"``
    draws one panel per dataset with every model on it.
    """
    if not curves:
        raise ValueError("no curves to render")
    if layout == "panels":
        groups = [(f"{c.dataset} / {c.model}", [c]) for c in curves]
    elif layout == "overlay":
        names: list[str] = []
        for c in curves:
            if c.dataset not in names:
                names.append(c.dataset)
        groups = [(n, [c for c in curves if c.dataset == n]) for n in names]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    models = []
    for c in curves:
        if c.model not in models:
            models.append(c.model)
    cols = max(1, min(columns, len(groups)))
    rows = (len(groups) + cols - 1) // cols
    body: list[str] = []
    for gi, (title, group) in enumerate(groups):
        ax = _Axes((gi % cols) * PANEL_W, (gi // cols) * PANEL_H)
        body += ax.frame(title, "frequency", "accuracy", (0, 0.5, 1, 1.5, 2), (0, 0.5, 1))
        for c in group:
            body += _curve_marks(ax, c, PALETTE[models.index(c.model) % len(PALETTE)])
    if layout == "overlay":
        for i, m in enumerate(models):
            y = rows * PANEL_H + 12 + 12 * i
            body.append(f'<rect x="8" y="{_f(y - 7)}" width="10" height="3" fill="{PALETTE[i % len(PALETTE)]}"/>')
            body.append(f'<text x="22" y="{_f(y - 3)}">{escape(m)}</text>')
    height = rows * PANEL_H + (12 * len(models) + 10 if layout == "overlay" else 0)
    return _document(cols * PANEL_W, height, body, meta or {})


def render_energy(comparison: EnergyComparison, meta: dict | None = None) -> str:
    """Grouped bars of input, target and output energy per bin."""
    centers = comparison.bin_centers
    width = centers[1] - centers[0] if len(centers) > 1 else 2.0
    ax = _Axes(0.0, 0.0, xlim=(0.0, centers[-1] + width / 2))
    ax.x1 = ax.x0 + max(360.0, 22.0 * len(centers))
    title = " ".join(str(comparison.tags.get(k, "")) for k in ("dataset", "model", "direction")).strip()
    body = ax.frame(title or "energy", "frequency", "energy", (0, 0.5, 1, 1.5, 2), (0, 0.5, 1))
    slot = (ax.px(width) - ax.px(0.0)) / 3.6
    for si, series in enumerate(("input", "target", "output")):
        vals = getattr(comparison, series)
        for b, (c, v) in enumerate(zip(centers, vals)):
            if v <= 0.0:
                continue
            x = ax.px(c) + (si - 1.5) * slot
            y = ax.py(v)
            body.append(
                f'<rect class="bar {series}" data-bin="{b}" data-value="{v:.6f}" x="{_f(x)}" y="{_f(y)}" '
                f'width="{_f(slot)}" height="{_f(ax.y0 - y)}" fill="{SERIES_COLORS[series]}"/>'
            )
    for si, series in enumerate(("input", "target", "output")):
        lx = ax.x1 - 70
        ly = ax.y1 + 10 + 11 * si
        body.append(f'<rect x="{_f(lx)}" y="{_f(ly - 7)}" width="8" height="8" fill="{SERIES_COLORS[series]}"/>')
        body.append(f'<text x="{_f(lx + 12)}" y="{_f(ly)}">{series}</text>')
    return _document(ax.x1 + MARGIN_R, PANEL_H, body, meta or {})
