"""PR curves over a confidence grid: CSV table, standalone SVG and a matplotlib figure."""

from __future__ import annotations

import csv
import io
from typing import Dict, List, Sequence, TextIO, Tuple
from xml.sax.saxutils import escape

from .metrics import DEFAULT_PR_GRID, PRPoint, pr_curve
from .report import Curve

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def curve_points(curves: Sequence[Curve], thresholds: Sequence[float] = DEFAULT_PR_GRID) -> List[Tuple[str, List[PRPoint]]]:
    if not curves:
        raise ValueError("no curves to plot")
    return [(label, pr_curve(scored, gt, thresholds)) for label, scored, gt in curves]


def write_pr_csv(points: Sequence[Tuple[str, List[PRPoint]]], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("curve", "threshold", "precision", "recall"))
    for label, pts in points:
        for p in pts:
            writer.writerow((label, repr(p.threshold), repr(p.precision), repr(p.recall)))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(points: Sequence[Tuple[str, List[PRPoint]]], size: int = 480) -> str:
    """Recall on x, precision on y, both axes fixed to [0, 1]."""
    margin = 56
    span = size - 2 * margin

    def sx(r):
        return margin + r * span

    def sy(p):
        return size - margin - p * span

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(0)}"/>'
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(0)}" y2="{sy(1)}"/></g>',
    ]
    ticks = ['<g class="ticks" fill="black">']
    for i in range(6):
        v = i / 5
        ticks.append(f'<text x="{_fmt(sx(v))}" y="{_fmt(sy(0) + 16)}" text-anchor="middle">{v:.1f}</text>')
        ticks.append(f'<text x="{_fmt(sx(0) - 8)}" y="{_fmt(sy(v) + 4)}" text-anchor="end">{v:.1f}</text>')
    ticks.append("</g>")
    out += ticks
    out.append(f'<text x="{size / 2:.0f}" y="{size - 16}" text-anchor="middle">Recall</text>')
    out.append(
        f'<text x="16" y="{size / 2:.0f}" text-anchor="middle" transform="rotate(-90 16 {size / 2:.0f})">Precision</text>'
    )
    for k, (label, pts) in enumerate(points):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(p.recall))},{_fmt(sy(p.precision))}" for p in pts)
        out.append(f'<g class="curve" data-label="{escape(label, {chr(34): "&quot;"})}">')
        out.append(f'<polyline class="pr-line" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for p in pts:
            out.append(
                f'<circle class="pr-marker" cx="{_fmt(sx(p.recall))}" cy="{_fmt(sy(p.precision))}" r="3" '
                f'fill="{color}"><title>t={p.threshold:g} P={p.precision:.4f} R={p.recall:.4f}</title></circle>'
            )
        out.append("</g>")
        ly = margin + 14 * k
        out.append(
            f'<g class="legend"><line x1="{sx(0.6)}" y1="{ly}" x2="{sx(0.6) + 18}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>'
            f'<text x="{sx(0.6) + 24}" y="{ly + 4}">{escape(label)}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_png(points: Sequence[Tuple[str, List[PRPoint]]], path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for k, (label, pts) in enumerate(points):
        ax.plot(
            [p.recall for p in pts],
            [p.precision for p in pts],
            marker="o",
            markersize=4,
            linewidth=1.5,
            color=PALETTE[k % len(PALETTE)],
            label=label,
        )
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.grid(True, linewidth=0.3)
    ax.legend(loc="lower left", fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=120, metadata={"Software": None})
    plt.close(fig)


def pr_csv_text(points) -> str:
    buf = io.StringIO()
    write_pr_csv(points, buf)
    return buf.getvalue()
