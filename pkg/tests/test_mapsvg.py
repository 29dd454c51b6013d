import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ttgen.mapsvg import (
    CHANNEL_UNITS,
    CONGESTION_COLORS,
    MapRender,
    RenderError,
    color_for,
    render_map,
    scale_spec,
)
from ttgen.roadnet import TrafficSnapshot
from ttgen.scenario import generate_network


@pytest.fixture(scope="module")
def graph():
    return generate_network(seed=3, n_roads=60)


def snap(graph, speed=45.0, congestion=2, travel_time=120.0):
    n = graph.n_roads
    return TrafficSnapshot(
        timestamp="2024-01-05T18:20:00",
        speeds=np.full(n, speed),
        congestion=np.full(n, congestion),
        travel_times=np.full(n, travel_time),
    )


class TestColorScale:
    def test_speed_endpoints_and_midpoints(self):
        assert color_for("speed", 0.0) == "#b30000"
        assert color_for("speed", 60.0) == "#ffcc00"
        assert color_for("speed", 120.0) == "#1a9641"
        # halfway between the red and amber stops
        assert color_for("speed", 30.0) == "#d96600"

    def test_travel_time_is_log_scaled(self):
        assert color_for("travel_time", 1.0) == "#1a9641"
        assert color_for("travel_time", 1800.0) == "#b30000"
        # geometric midpoint of [1, 1800] sits at the middle stop
        assert color_for("travel_time", np.sqrt(1800.0)) == "#ffcc00"
        # arithmetic midpoint is far up the log axis, deep in the red half
        assert color_for("travel_time", 900.0) != "#ffcc00"

    def test_congestion_swatches(self):
        for level, color in CONGESTION_COLORS.items():
            assert color_for("congestion", level) == color
        assert color_for("congestion", 2.4) == CONGESTION_COLORS[2]

    def test_out_of_range_values_clamp(self):
        assert color_for("speed", -10.0) == color_for("speed", 0.0)
        assert color_for("speed", 500.0) == color_for("speed", 120.0)
        assert color_for("travel_time", 0.25) == color_for("travel_time", 1.0)
        assert color_for("congestion", 0) == CONGESTION_COLORS[1]
        assert color_for("congestion", 9) == CONGESTION_COLORS[4]

    def test_unknown_channel(self):
        with pytest.raises(RenderError, match="unknown channel"):
            color_for("density", 1.0)

    def test_scale_spec_covers_all_channels(self):
        spec = scale_spec()
        assert set(spec) == {"speed", "congestion", "travel_time"}
        assert spec["speed"]["transform"] == "linear"
        assert spec["travel_time"]["transform"] == "log"
        assert spec["congestion"]["kind"] == "discrete"
        for name, unit in CHANNEL_UNITS.items():
            assert spec[name]["unit"] == unit


class TestRenderMap:
    def test_one_polyline_per_road(self, graph):
        render = render_map(snap(graph), graph, "speed")
        assert isinstance(render, MapRender)
        assert render.svg.count("<polyline") == graph.n_roads

    def test_parses_as_xml(self, graph):
        root = ET.fromstring(render_map(snap(graph), graph, "congestion").svg)
        assert root.tag.endswith("svg")

    def test_uniform_snapshot_single_color(self, graph):
        render = render_map(snap(graph, speed=45.0), graph, "speed")
        strokes = set(re.findall(r'stroke="(#[0-9a-f]{6})"', render.svg))
        assert strokes == {color_for("speed", 45.0)}

    def test_byte_identical(self, graph):
        a = render_map(snap(graph), graph, "travel_time")
        b = render_map(snap(graph), graph, "travel_time")
        assert a.svg == b.svg

    def test_tooltip_titles(self, graph):
        render = render_map(snap(graph, speed=45.0), graph, "speed")
        name = graph.roads[0].name
        assert f"<title>{name}: 45.0 km/h</title>" in render.svg
        render = render_map(snap(graph, congestion=3), graph, "congestion")
        assert f"<title>{name}: 3</title>" in render.svg

    def test_varied_values_get_distinct_colors(self, graph):
        n = graph.n_roads
        s = TrafficSnapshot(
            timestamp="2024-01-05T18:20:00",
            speeds=np.linspace(5.0, 115.0, n),
            congestion=np.array([1 + i % 4 for i in range(n)]),
            travel_times=np.full(n, 60.0),
        )
        render = render_map(s, graph, "speed")
        strokes = set(re.findall(r'stroke="(#[0-9a-f]{6})"', render.svg))
        assert len(strokes) > 10
        render = render_map(s, graph, "congestion")
        strokes = set(re.findall(r'stroke="(#[0-9a-f]{6})"', render.svg))
        assert strokes == set(CONGESTION_COLORS.values())

    def test_legend_present(self, graph):
        assert "linearGradient" in render_map(snap(graph), graph, "speed").svg
        cong = render_map(snap(graph), graph, "congestion").svg
        assert cong.count("legend-swatch") == 4

    def test_rejects_bad_inputs(self, graph):
        with pytest.raises(RenderError, match="unknown channel"):
            render_map(snap(graph), graph, "volume")
        small = generate_network(seed=3, n_roads=12)
        with pytest.raises(RenderError, match="roads"):
            render_map(snap(small), graph, "speed")
