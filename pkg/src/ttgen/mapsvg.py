"""Deterministic SVG rendering of a traffic snapshot over the road map.

Color scales are fixed so two renders of the same values are byte-identical
and so the browser client can reproduce the exact mapping from a shared spec:
speed and travel time are continuous three-stop gradients (travel time on a
log axis), congestion is four discrete swatches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roadnet import (
    CHANNELS,
    MAX_SPEED_KMH,
    N_CONGESTION_LEVELS,
    TRAVEL_TIME_RANGE_S,
    RoadGraph,
    TrafficSnapshot,
)

CHANNEL_UNITS = {"speed": "km/h", "congestion": "", "travel_time": "s"}

# three-stop gradients over the normalized position u in [0, 1]
SPEED_GRADIENT = ((0.0, "#b30000"), (0.5, "#ffcc00"), (1.0, "#1a9641"))
TRAVEL_TIME_GRADIENT = ((0.0, "#1a9641"), (0.5, "#ffcc00"), (1.0, "#b30000"))
CONGESTION_COLORS = {1: "#1a9641", 2: "#ffcc00", 3: "#f97a00", 4: "#b30000"}

STROKE_WIDTH = 14.0
MARGIN_M = 120.0
LEGEND_WIDTH = 170.0


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class MapRender:
    svg: str
    channel: str
    scale: dict  # the scale spec entry used for this channel


def _hex_to_rgb(h: str) -> tuple[int, int, int]:
    return int(h[1:3], 16), int(h[3:5], 16), int(h[5:7], 16)


def _rgb_to_hex(rgb) -> str:
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _gradient_color(stops, u: float) -> str:
    u = min(1.0, max(0.0, u))
    for (u0, c0), (u1, c1) in zip(stops, stops[1:]):
        if u <= u1:
            w = 0.0 if u1 == u0 else (u - u0) / (u1 - u0)
            a = _hex_to_rgb(c0)
            b = _hex_to_rgb(c1)
            return _rgb_to_hex(tuple(a[i] + w * (b[i] - a[i]) for i in range(3)))
    return stops[-1][1]


def _speed_u(v: float) -> float:
    return float(v) / MAX_SPEED_KMH


def _travel_time_u(v: float) -> float:
    lo, hi = TRAVEL_TIME_RANGE_S
    v = min(float(hi), max(float(lo), float(v)))
    return math.log(v / lo) / math.log(hi / lo)


def color_for(channel: str, value: float) -> str:
    if channel == "speed":
        return _gradient_color(SPEED_GRADIENT, _speed_u(value))
    if channel == "travel_time":
        return _gradient_color(TRAVEL_TIME_GRADIENT, _travel_time_u(value))
    if channel == "congestion":
        level = int(np.clip(round(float(value)), 1, N_CONGESTION_LEVELS))
        return CONGESTION_COLORS[level]
    raise RenderError(f"unknown channel {channel!r}")


def scale_spec() -> dict:
    """Machine-readable scale description shared with the browser client."""
    return {
        "speed": {
            "kind": "continuous",
            "lo": 0.0,
            "hi": float(MAX_SPEED_KMH),
            "transform": "linear",
            "stops": [[u, c] for u, c in SPEED_GRADIENT],
            "unit": CHANNEL_UNITS["speed"],
        },
        "travel_time": {
            "kind": "continuous",
            "lo": float(TRAVEL_TIME_RANGE_S[0]),
            "hi": float(TRAVEL_TIME_RANGE_S[1]),
            "transform": "log",
            "stops": [[u, c] for u, c in TRAVEL_TIME_GRADIENT],
            "unit": CHANNEL_UNITS["travel_time"],
        },
        "congestion": {
            "kind": "discrete",
            "colors": {str(k): v for k, v in CONGESTION_COLORS.items()},
            "unit": CHANNEL_UNITS["congestion"],
        },
    }


def _format_value(channel: str, value: float) -> str:
    if channel == "congestion":
        return str(int(round(float(value))))
    return f"{float(value):.1f}"


def _title(name: str, channel: str, value: float) -> str:
    unit = CHANNEL_UNITS[channel]
    text = f"{name}: {_format_value(channel, value)}"
    return f"{text} {unit}" if unit else text


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _legend(channel: str, x: float, y: float, height: float) -> list[str]:
    parts = [f'<g class="legend" transform="translate({x:.1f},{y:.1f})">']
    if channel == "congestion":
        parts.append('<text x="0" y="-10" font-size="26">congestion</text>')
        for i, level in enumerate(sorted(CONGESTION_COLORS)):
            yy = i * 44.0
            parts.append(
                f'<rect class="legend-swatch" x="0" y="{yy:.1f}" width="36" height="36" fill="{CONGESTION_COLORS[level]}"/>'
            )
            parts.append(f'<text x="46" y="{yy + 26:.1f}" font-size="26">{level}</text>')
    else:
        stops = SPEED_GRADIENT if channel == "speed" else TRAVEL_TIME_GRADIENT
        spec = scale_spec()[channel]
        parts.append(f'<defs><linearGradient id="scale-{channel}" x1="0" y1="1" x2="0" y2="0">')
        for u, c in stops:
            parts.append(f'<stop offset="{u * 100:.0f}%" stop-color="{c}"/>')
        parts.append("</linearGradient></defs>")
        unit = CHANNEL_UNITS[channel]
        parts.append(f'<text x="0" y="-10" font-size="26">{channel} ({unit})</text>')
        parts.append(
            f'<rect x="0" y="0" width="36" height="{height:.1f}" fill="url(#scale-{channel})"/>'
        )
        hi, lo = spec["hi"], spec["lo"]
        parts.append(f'<text x="46" y="26" font-size="26">{hi:.0f}</text>')
        parts.append(f'<text x="46" y="{height:.1f}" font-size="26">{lo:.0f}</text>')
    parts.append("</g>")
    return parts


def render_map(snapshot: TrafficSnapshot, graph: RoadGraph, channel: str) -> MapRender:
    if channel not in CHANNELS:
        raise RenderError(f"unknown channel {channel!r}")
    if snapshot.n_roads != graph.n_roads:
        raise RenderError(f"snapshot covers {snapshot.n_roads} roads, graph has {graph.n_roads}")
    values = {"speed": snapshot.speeds, "congestion": snapshot.congestion, "travel_time": snapshot.travel_times}[channel]

    xs = [p[0] for r in graph.roads for p in r.polyline]
    ys = [p[1] for r in graph.roads for p in r.polyline]
    x0, x1 = min(xs) - MARGIN_M, max(xs) + MARGIN_M
    y0, y1 = min(ys) - MARGIN_M, max(ys) + MARGIN_M
    width = x1 - x0 + LEGEND_WIDTH + MARGIN_M
    height = y1 - y0

    def sx(x: float) -> float:
        return x - x0

    def sy(y: float) -> float:
        return y1 - y  # flip so north is up

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:.1f} {height:.1f}" '
        f'width="{width:.1f}" height="{height:.1f}">',
        f'<rect x="0" y="0" width="{width:.1f}" height="{height:.1f}" fill="#f7f7f2"/>',
    ]
    for road in graph.roads:
        pts = " ".join(f"{sx(px):.1f},{sy(py):.1f}" for px, py in road.polyline)
        color = color_for(channel, float(values[road.road_id]))
        title = _escape(_title(road.name, channel, float(values[road.road_id])))
        parts.append(
            f'<polyline data-road="{road.road_id}" points="{pts}" fill="none" '
            f'stroke="{color}" stroke-width="{STROKE_WIDTH:.1f}" stroke-linecap="round">'
            f"<title>{title}</title></polyline>"
        )
    legend_h = min(400.0, height - 2 * MARGIN_M)
    parts.extend(_legend(channel, x1 - x0 + MARGIN_M, MARGIN_M + 40.0, legend_h))
    parts.append("</svg>")
    return MapRender(svg="\n".join(parts) + "\n", channel=channel, scale=scale_spec()[channel])
