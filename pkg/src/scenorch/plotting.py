"""Overhead SVG rendering of maps and executed trajectories.

Pure path/polyline emission, no plotting dependency. Actor trajectories
carry snapshot markers with fading history tails so open- and closed-loop
behaviour can be compared visually.
"""

from __future__ import annotations

from .lane_map import LaneGraph, TURN_KINDS
from .trace import Trace

ACTOR_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline(points, stroke, width, opacity=1.0, dashed=False) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in points)
    dash = ' stroke-dasharray="1.5,1.5"' if dashed else ""
    return (
        f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
        f'stroke-width="{width}" stroke-opacity="{opacity}"{dash}/>'
    )


def render_trace_svg(
    trace: Trace,
    graph: LaneGraph,
    tail_s: float = 4.0,
    snapshot_every_s: float = 4.0,
) -> str:
    xs, ys = [], []
    for seg in graph.segments.values():
        for x, y in seg.centerline:
            xs.append(x)
            ys.append(y)
    pad = 8.0
    x0, x1 = min(xs) - pad, max(xs) + pad
    y0, y1 = min(ys) - pad, max(ys) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(x0)} {_fmt(-y1)} '
        f'{_fmt(x1 - x0)} {_fmt(y1 - y0)}">',
        f'<rect x="{_fmt(x0)}" y="{_fmt(-y1)}" width="{_fmt(x1 - x0)}" '
        f'height="{_fmt(y1 - y0)}" fill="#fafafa"/>',
    ]
    for seg in sorted(graph.segments.values(), key=lambda s: s.id):
        parts.append(
            _polyline(
                seg.centerline, "#bbbbbb", 0.4, dashed=seg.kind in TURN_KINDS
            )
        )
    dt = trace.dt
    n_tail = max(1, int(round(tail_s / dt)))
    every = max(1, int(round(snapshot_every_s / dt)))
    for idx, actor in enumerate(trace.actor_ids()):
        color = ACTOR_COLORS[idx % len(ACTOR_COLORS)]
        pts = [(f.states[actor].x, f.states[actor].y) for f in trace.frames]
        parts.append(_polyline(pts, color, 0.3, opacity=0.35))
        for k in range(0, len(pts), every):
            lo = max(0, k - n_tail)
            if k - lo >= 1:
                parts.append(_polyline(pts[lo : k + 1], color, 0.9, opacity=0.8))
            x, y = pts[k]
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(-y)}" r="1.1" fill="{color}"/>'
            )
        x, y = pts[0]
        parts.append(
            f'<text x="{_fmt(x + 2)}" y="{_fmt(-y - 2)}" font-size="4" '
            f'fill="{color}">A{actor}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
