"""Minimal SVG line and bar charts, written as plain markup."""
from __future__ import annotations

from xml.sax.saxutils import escape

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2})">{escape(ylabel)}</text>',
    ]


def _ticks(lo, hi, axis, n=5):
    out = []
    for k in range(n + 1):
        v = lo + (hi - lo) * k / n
        if axis == "y":
            y = H - BOTTOM - (H - TOP - BOTTOM) * k / n
            out.append(f'<text x="{LEFT - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3g}</text>')
        else:
            x = LEFT + (W - LEFT - RIGHT) * k / n
            out.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.3g}</text>')
    return out


def line_plot(xs, ys, title="", xlabel="", ylabel="") -> str:
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    parts = _frame(title, xlabel, ylabel)
    if xs:
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1
        sx = (W - LEFT - RIGHT) / (x1 - x0)
        sy = (H - TOP - BOTTOM) / (y1 - y0)
        pts = " ".join(f"{LEFT + (x - x0) * sx:.2f},{H - BOTTOM - (y - y0) * sy:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
        parts += _ticks(x0, x1, "x") + _ticks(y0, y1, "y")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(labels, values, errors=None, title="", ylabel="") -> str:
    parts = _frame(title, "", ylabel)
    n = len(labels)
    if n:
        errors = errors or [0.0] * n
        top = max(max(v + e for v, e in zip(values, errors)), 1e-9)
        slot = (W - LEFT - RIGHT) / n
        sy = (H - TOP - BOTTOM) / top
        for i, (lab, v, e) in enumerate(zip(labels, values, errors)):
            x = LEFT + slot * (i + 0.15)
            bw = slot * 0.7
            parts.append(f'<rect x="{x:.2f}" y="{H - BOTTOM - v * sy:.2f}" width="{bw:.2f}" '
                         f'height="{v * sy:.2f}" fill="steelblue"/>')
            if e:
                cx = x + bw / 2
                parts.append(f'<line x1="{cx:.2f}" y1="{H - BOTTOM - (v + e) * sy:.2f}" x2="{cx:.2f}" '
                             f'y2="{H - BOTTOM - max(v - e, 0) * sy:.2f}" stroke="black"/>')
            parts.append(f'<text x="{x + bw / 2:.2f}" y="{H - BOTTOM + 14}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="10">{escape(str(lab))}</text>')
        parts += _ticks(0, top, "y")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
