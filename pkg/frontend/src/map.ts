// Pure SVG assembly for the interactive overlay. Geometry follows the server
// renderer (margins, north-up flip, rounded strokes); colors come from the
// shared scale constants so both sides paint identical values identically.

import { CHANNELS, type Channel, colorFor, diffColor } from "./color.js";
import { CHANNEL_UNITS } from "./scale_constants.js";
import type { NetworkJson, RoadJson, SnapshotJson } from "./api.js";

export const STROKE_WIDTH = 14;
export const MARGIN = 120;

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function boundingBox(network: NetworkJson): Box {
  let x0 = Infinity;
  let y0 = Infinity;
  let x1 = -Infinity;
  let y1 = -Infinity;
  for (const road of network.roads) {
    for (const [x, y] of road.polyline) {
      x0 = Math.min(x0, x);
      y0 = Math.min(y0, y);
      x1 = Math.max(x1, x);
      y1 = Math.max(y1, y);
    }
  }
  return { x0: x0 - MARGIN, y0: y0 - MARGIN, x1: x1 + MARGIN, y1: y1 + MARGIN };
}

function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function channelValue(snapshot: SnapshotJson, channel: Channel, road: number): number {
  if (channel === "speed") return snapshot.speeds[road];
  if (channel === "congestion") return snapshot.congestion[road];
  return snapshot.travel_times[road];
}

function formatValue(channel: Channel, value: number): string {
  if (channel === "congestion") return String(Math.round(value));
  return value.toFixed(1);
}

/** Hover text shows the road plus all three channel values. */
export function roadTitle(name: string, snapshot: SnapshotJson, road: number): string {
  const parts = CHANNELS.map((ch) => {
    const unit = CHANNEL_UNITS[ch];
    const text = formatValue(ch, channelValue(snapshot, ch, road));
    return unit === "" ? `level ${text}` : `${text} ${unit}`;
  });
  return `${name}: ${parts.join(", ")}`;
}

function svgShell(box: Box, body: string[]): string {
  const w = (box.x1 - box.x0).toFixed(1);
  const h = (box.y1 - box.y0).toFixed(1);
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${w} ${h}" class="road-map">`,
    `<rect x="0" y="0" width="${w}" height="${h}" fill="#f7f7f2"/>`,
    ...body,
    "</svg>",
  ].join("\n") + "\n";
}

function polylines(
  network: NetworkJson,
  box: Box,
  colorOf: (road: RoadJson) => string,
  titleOf: (road: RoadJson) => string,
): string[] {
  const out: string[] = [];
  for (const road of network.roads) {
    const pts = road.polyline
      .map(([x, y]) => `${(x - box.x0).toFixed(1)},${(box.y1 - y).toFixed(1)}`)
      .join(" ");
    out.push(
      `<polyline data-road="${road.road_id}" points="${pts}" fill="none" `
      + `stroke="${colorOf(road)}" stroke-width="${STROKE_WIDTH}" `
      + `stroke-linecap="round"><title>${escapeXml(titleOf(road))}</title></polyline>`,
    );
  }
  return out;
}

export function renderOverlay(
  network: NetworkJson,
  snapshot: SnapshotJson,
  channel: Channel,
): string {
  if (snapshot.speeds.length !== network.n_roads) {
    throw new Error(
      `snapshot covers ${snapshot.speeds.length} roads, network has ${network.n_roads}`,
    );
  }
  const box = boundingBox(network);
  return svgShell(box, polylines(
    network,
    box,
    (road) => colorFor(channel, channelValue(snapshot, channel, road.road_id)),
    (road) => roadTitle(road.name, snapshot, road.road_id),
  ));
}

/** Neutral map for picking a road in the builder; selection drawn in blue. */
export function renderPicker(network: NetworkJson, selectedRoad: number | null): string {
  const box = boundingBox(network);
  return svgShell(box, polylines(
    network,
    box,
    (road) => (road.road_id === selectedRoad ? "#2166ac" : "#b9b9b3"),
    (road) => road.name,
  ));
}

/** Difference overlay, right minus left, neutral where values match. */
export function renderDiff(
  network: NetworkJson,
  left: SnapshotJson,
  right: SnapshotJson,
  channel: Channel,
): string {
  if (left.speeds.length !== right.speeds.length) {
    throw new Error("compared snapshots cover different road counts");
  }
  if (left.speeds.length !== network.n_roads) {
    throw new Error("snapshots do not match the network");
  }
  const box = boundingBox(network);
  const unit = CHANNEL_UNITS[channel];
  return svgShell(box, polylines(
    network,
    box,
    (road) => diffColor(channel, channelValue(right, channel, road.road_id) - channelValue(left, channel, road.road_id)),
    (road) => {
      const delta = channelValue(right, channel, road.road_id) - channelValue(left, channel, road.road_id);
      const signed = `${delta >= 0 ? "+" : ""}${formatValue(channel, delta)}`;
      return `${road.name}: ${signed}${unit === "" ? "" : " " + unit}`;
    },
  ));
}
