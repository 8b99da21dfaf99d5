"""Deterministic artifact writers: JSON records, CSV tables, SVG scatter.

Identical inputs must produce identical bytes, so keys are sorted, floats
are written with repr (shortest round-trip form), and nothing here touches
clocks or locale.
"""

from __future__ import annotations

import json

__all__ = [
    "dump_json",
    "render_json",
    "load_json",
    "format_cell",
    "render_csv",
    "write_csv",
    "render_scatter_svg",
]


def render_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(render_json(obj))


def load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _resolve_columns(rows, columns) -> list[str]:
    if columns is not None:
        return list(columns)
    out: list[str] = []
    for row in rows:
        for key in row:
            if key not in out:
                out.append(key)
    return out


def render_csv(rows, columns=None) -> str:
    """CSV text from dict rows; column order is given or first-seen order."""
    columns = _resolve_columns(rows, columns)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_cell(row.get(col)) for col in columns))
    return "\n".join(lines) + "\n"


def write_csv(rows, path: str, columns=None) -> list[str]:
    """Write dict rows; returns the resolved column order."""
    columns = _resolve_columns(rows, columns)
    with open(path, "w") as fh:
        fh.write(render_csv(rows, columns))
    return columns


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#e377c2", "#7f7f7f")


def render_scatter_svg(points, title: str, path: str | None = None,
                       xlabel: str = "identity score",
                       ylabel: str = "style score") -> str:
    """Minimal labeled scatter over [0, 1]^2; returns the SVG text."""
    w, h, pad = 480, 360, 48

    def px(x):
        return pad + x * (w - 2 * pad)

    def py(y):
        return h - pad - y * (h - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}"'
        f' viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(0)}" stroke="black"/>',
        f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(0)}" y2="{py(1)}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="14" y="{h / 2}" text-anchor="middle" font-size="11"'
        f' transform="rotate(-90 14 {h / 2})">{ylabel}</text>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{px(tick)}" y="{py(0) + 16}" text-anchor="middle"'
            f' font-size="10">{tick:g}</text>')
        parts.append(
            f'<text x="{px(0) - 8}" y="{py(tick) + 3}" text-anchor="end"'
            f' font-size="10">{tick:g}</text>')
    for i, (x, y, label) in enumerate(points):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        cx, cy = px(min(max(x, 0.0), 1.0)), py(min(max(y, 0.0), 1.0))
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="5" fill="{color}"/>')
        parts.append(
            f'<text x="{cx + 8:.2f}" y="{cy - 6:.2f}" font-size="10">{label}</text>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
