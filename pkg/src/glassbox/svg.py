"""Minimal SVG bar charts written as plain markup (byte-stable output)."""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH = 640
ROW = 22
LEFT = 150
RIGHT = 90
TOP = 40

SHAP_COLORS = ("#ff0051", "#008bfb")   # pushes score up / down
LIME_COLORS = ("#2ca02c", "#d62728")   # green positive, red negative
SUMMARY_COLOR = "#1f77b4"


def _header(height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="#ffffff"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def signed_bar_chart(labels, values, title, colors=SHAP_COLORS, digits=4) -> str:
    """Horizontal bars around a zero axis; positive bars right in ``colors[0]``."""
    n = len(labels)
    height = TOP + ROW * max(n, 1) + 30
    span = WIDTH - LEFT - RIGHT
    zero = LEFT + span / 2
    vmax = max((abs(v) for v in values), default=0.0) or 1.0
    out = _header(height, title)
    out.append(f'<line x1="{zero:.1f}" y1="{TOP - 5}" x2="{zero:.1f}" y2="{TOP + ROW * n}" stroke="#333333"/>')
    for k, (lab, v) in enumerate(zip(labels, values)):
        y = TOP + ROW * k
        w = abs(v) / vmax * (span / 2)
        x = zero if v >= 0 else zero - w
        color = colors[0] if v >= 0 else colors[1]
        out.append(f'<text x="{LEFT - 8}" y="{y + 15}" text-anchor="end">{escape(str(lab))}</text>')
        out.append(f'<rect x="{x:.2f}" y="{y + 3}" width="{w:.2f}" height="{ROW - 6}" fill="{color}"/>')
        tx = zero + w + 4 if v >= 0 else zero - w - 4
        anchor = "start" if v >= 0 else "end"
        out.append(f'<text x="{tx:.2f}" y="{y + 15}" text-anchor="{anchor}">{v:.{digits}f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def magnitude_bar_chart(labels, values, title, color=SUMMARY_COLOR, digits=4) -> str:
    """Non-negative horizontal bars from a left axis, drawn in the given order."""
    n = len(labels)
    height = TOP + ROW * max(n, 1) + 30
    span = WIDTH - LEFT - RIGHT
    vmax = max(values, default=0.0) or 1.0
    out = _header(height, title)
    out.append(f'<line x1="{LEFT}" y1="{TOP - 5}" x2="{LEFT}" y2="{TOP + ROW * n}" stroke="#333333"/>')
    for k, (lab, v) in enumerate(zip(labels, values)):
        y = TOP + ROW * k
        w = v / vmax * span
        out.append(f'<text x="{LEFT - 8}" y="{y + 15}" text-anchor="end">{escape(str(lab))}</text>')
        out.append(f'<rect x="{LEFT}" y="{y + 3}" width="{w:.2f}" height="{ROW - 6}" fill="{color}"/>')
        out.append(f'<text x="{LEFT + w + 4:.2f}" y="{y + 15}">{v:.{digits}f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
