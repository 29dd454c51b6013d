// Generated by scripts/make_fixtures.py from the server scale spec.
// Do not edit by hand; regenerate instead.

export const SCALES = {
  "congestion": {
    "colors": {
      "1": "#1a9641",
      "2": "#ffcc00",
      "3": "#f97a00",
      "4": "#b30000"
    },
    "kind": "discrete",
    "unit": ""
  },
  "speed": {
    "hi": 120.0,
    "kind": "continuous",
    "lo": 0.0,
    "stops": [
      [
        0.0,
        "#b30000"
      ],
      [
        0.5,
        "#ffcc00"
      ],
      [
        1.0,
        "#1a9641"
      ]
    ],
    "transform": "linear",
    "unit": "km/h"
  },
  "travel_time": {
    "hi": 1800.0,
    "kind": "continuous",
    "lo": 1.0,
    "stops": [
      [
        0.0,
        "#1a9641"
      ],
      [
        0.5,
        "#ffcc00"
      ],
      [
        1.0,
        "#b30000"
      ]
    ],
    "transform": "log",
    "unit": "s"
  }
} as const;

export const CHANNEL_UNITS = {
  "congestion": "",
  "speed": "km/h",
  "travel_time": "s"
} as const;
