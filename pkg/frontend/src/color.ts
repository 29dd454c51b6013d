// Client-side color mapping. Must equal the server's mapping byte for byte,
// so the interpolation copies its arithmetic, including round-half-to-even.

import { SCALES } from "./scale_constants.js";

export type Channel = "speed" | "congestion" | "travel_time";
export const CHANNELS: Channel[] = ["speed", "congestion", "travel_time"];

export const NEUTRAL = "#f7f7f7";
const DIVERGING: ReadonlyArray<readonly [number, string]> = [
  [0.0, "#2166ac"], [0.5, NEUTRAL], [1.0, "#b2182b"],
];

function hexToRgb(h: string): [number, number, number] {
  return [
    parseInt(h.slice(1, 3), 16),
    parseInt(h.slice(3, 5), 16),
    parseInt(h.slice(5, 7), 16),
  ];
}

// matches Python's round() on the half-integer boundary
function roundHalfEven(x: number): number {
  const floor = Math.floor(x);
  const diff = x - floor;
  if (diff < 0.5) return floor;
  if (diff > 0.5) return floor + 1;
  return floor % 2 === 0 ? floor : floor + 1;
}

function rgbToHex(rgb: [number, number, number]): string {
  return "#" + rgb.map((c) => roundHalfEven(c).toString(16).padStart(2, "0")).join("");
}

export function gradientColor(
  stops: ReadonlyArray<readonly [number, string]>,
  u: number,
): string {
  const v = Math.min(1.0, Math.max(0.0, u));
  for (let i = 0; i + 1 < stops.length; i += 1) {
    const [u0, c0] = stops[i];
    const [u1, c1] = stops[i + 1];
    if (v <= u1) {
      const w = u1 === u0 ? 0.0 : (v - u0) / (u1 - u0);
      const a = hexToRgb(c0);
      const b = hexToRgb(c1);
      return rgbToHex([
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
      ]);
    }
  }
  return stops[stops.length - 1][1];
}

export function colorFor(channel: Channel, value: number): string {
  const spec = SCALES[channel];
  if (spec.kind === "discrete") {
    const level = Math.min(4, Math.max(1, roundHalfEven(value)));
    return spec.colors[String(level) as keyof typeof spec.colors];
  }
  let u: number;
  if (spec.transform === "log") {
    const v = Math.min(spec.hi, Math.max(spec.lo, value));
    u = Math.log(v / spec.lo) / Math.log(spec.hi / spec.lo);
  } else {
    u = value / spec.hi;
  }
  return gradientColor(spec.stops, u);
}

/** Span used to normalize a difference overlay for each channel. */
export function diffSpan(channel: Channel): number {
  const spec = SCALES[channel];
  if (spec.kind === "discrete") return 3.0; // level 4 minus level 1
  return spec.hi - spec.lo;
}

/** Diverging color for right-minus-left differences, neutral at exactly 0. */
export function diffColor(channel: Channel, delta: number): string {
  if (delta === 0) return NEUTRAL;
  const u = 0.5 + 0.5 * Math.max(-1, Math.min(1, delta / diffSpan(channel)));
  return gradientColor(DIVERGING, u);
}
