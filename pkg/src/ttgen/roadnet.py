"""Road-network representation and the grid packing pipeline.

Per-road traffic vectors live on a graph; for the diffusion model they are
normalised to [-1, 1], padded with "empty road" cells up to a perfect square,
and reshaped row-major by road id into an H x W x 3 image.  The padded
adjacency keeps empty roads isolated so no message passing crosses them.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAX_SPEED_KMH = 120.0
MIN_SPEED_KMH = 2.0
TRAVEL_TIME_RANGE_S = (1.0, 1800.0)
N_CONGESTION_LEVELS = 4

CHANNELS = ("speed", "congestion", "travel_time")


class GraphError(ValueError):
    pass


class GridStructureError(ValueError):
    pass


@dataclass(frozen=True)
class Road:
    road_id: int
    name: str
    length_m: float
    polyline: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class RoadGraph:
    roads: tuple[Road, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n_roads(self) -> int:
        return len(self.roads)

    def __post_init__(self):
        n = len(self.roads)
        ids = [r.road_id for r in self.roads]
        if ids != list(range(n)):
            raise GraphError("road ids must be contiguous 0..N-1")
        for r in self.roads:
            if not r.name:
                raise GraphError(f"road {r.road_id} has empty name")
            if r.length_m <= 0:
                raise GraphError(f"road {r.road_id} has non-positive length")
        seen = set()
        for a, b in self.edges:
            if a == b:
                raise GraphError(f"self-loop edge on road {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a},{b}) references unknown road")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
        if n > 1 and not self._connected():
            raise GraphError("road graph is not connected")

    def _connected(self) -> bool:
        n = self.n_roads
        neigh: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            neigh[a].append(b)
            neigh[b].append(a)
        seen = {0}
        frontier = [0]
        while frontier:
            cur = frontier.pop()
            for nxt in neigh[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == n

    def name_of(self, road_id: int) -> str:
        return self.roads[road_id].name

    def id_of_name(self, name: str) -> int:
        for r in self.roads:
            if r.name == name:
                return r.road_id
        raise GraphError(f"unknown road name {name!r}")

    def hop_distances(self, source: int) -> np.ndarray:
        """BFS hop count from source to every road (-1 if unreachable)."""
        n = self.n_roads
        neigh: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            neigh[a].append(b)
            neigh[b].append(a)
        dist = np.full(n, -1, dtype=np.int64)
        dist[source] = 0
        frontier = [source]
        while frontier:
            nxt_frontier = []
            for cur in frontier:
                for nxt in neigh[cur]:
                    if dist[nxt] < 0:
                        dist[nxt] = dist[cur] + 1
                        nxt_frontier.append(nxt)
            frontier = nxt_frontier
        return dist

    def to_json_dict(self) -> dict:
        return {
            "n_roads": self.n_roads,
            "roads": [
                {
                    "road_id": r.road_id,
                    "name": r.name,
                    "length_m": r.length_m,
                    "polyline": [list(p) for p in r.polyline],
                }
                for r in self.roads
            ],
            "edges": [list(e) for e in self.edges],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "RoadGraph":
        roads = tuple(
            Road(
                road_id=r["road_id"],
                name=r["name"],
                length_m=r["length_m"],
                polyline=tuple((p[0], p[1]) for p in r["polyline"]),
            )
            for r in doc["roads"]
        )
        edges = tuple((e[0], e[1]) for e in doc["edges"])
        return RoadGraph(roads=roads, edges=edges)


def save_graph(path, graph: RoadGraph) -> None:
    with open(str(path), "w") as f:
        json.dump(graph.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_graph(path) -> RoadGraph:
    with open(str(path)) as f:
        return RoadGraph.from_json_dict(json.load(f))


# -- adjacency -----------------------------------------------------------------


@dataclass(frozen=True)
class AdjacencyMatrix:
    entries: np.ndarray  # (n, n) in {0, 1}

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __post_init__(self):
        a = self.entries
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.diagonal(a).any():
            raise GraphError("adjacency must have zero diagonal")
        vals = np.unique(a)
        if not np.isin(vals, (0.0, 1.0)).all():
            raise GraphError("adjacency entries must be 0 or 1")


def adjacency_from_graph(graph: RoadGraph) -> AdjacencyMatrix:
    a = np.zeros((graph.n_roads, graph.n_roads))
    for i, j in graph.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return AdjacencyMatrix(entries=a)


@dataclass(frozen=True)
class NormalizedAdjacency:
    entries: np.ndarray  # (n_padded, n_padded)

    @property
    def n_padded(self) -> int:
        return self.entries.shape[0]


def build_normalized_adjacency(adj: AdjacencyMatrix, n_padded: int | None = None) -> NormalizedAdjacency:
    """Symmetric normalisation of the self-looped, padded adjacency.

    Padded rows/cols are all-zero before the self-loop is added, so empty
    roads end up isolated with a lone diagonal entry of 1.
    """
    n = adj.n
    if n_padded is None:
        n_padded = pad_target(n)
    if n_padded < n:
        raise GraphError(f"n_padded {n_padded} smaller than n {n}")
    a_tilde = np.zeros((n_padded, n_padded))
    a_tilde[:n, :n] = adj.entries
    a_tilde[np.arange(n_padded), np.arange(n_padded)] = 1.0
    d = a_tilde.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(d)
    entries = a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return NormalizedAdjacency(entries=entries)


def save_adjacency(path, norm: NormalizedAdjacency) -> None:
    """Dense binary form: u64 little-endian n_padded header, then row-major f64."""
    with open(str(path), "wb") as f:
        f.write(struct.pack("<Q", norm.n_padded))
        f.write(np.ascontiguousarray(norm.entries, dtype="<f8").tobytes())


def load_adjacency(path) -> NormalizedAdjacency:
    with open(str(path), "rb") as f:
        (n,) = struct.unpack("<Q", f.read(8))
        data = np.frombuffer(f.read(n * n * 8), dtype="<f8").reshape(n, n)
    return NormalizedAdjacency(entries=data.astype(np.float64))


# -- padding -------------------------------------------------------------------


def pad_target(n: int) -> int:
    """Smallest perfect square >= n: the padded cell count for n roads."""
    if n < 1:
        raise ValueError("pad_target needs n >= 1")
    side = math.isqrt(n - 1) + 1
    return side * side


def grid_side(n: int) -> int:
    """Side length of the square grid holding n roads."""
    return math.isqrt(pad_target(n))


# -- snapshots and scalers -----------------------------------------------------


@dataclass(frozen=True)
class TrafficSnapshot:
    timestamp: str  # ISO 8601, e.g. "2024-01-01T08:00:00"
    speeds: np.ndarray  # km/h
    congestion: np.ndarray  # levels 1..N_CONGESTION_LEVELS
    travel_times: np.ndarray  # seconds

    @property
    def n_roads(self) -> int:
        return self.speeds.shape[0]

    def __post_init__(self):
        n = self.speeds.shape[0]
        if self.congestion.shape[0] != n or self.travel_times.shape[0] != n:
            raise GridStructureError("snapshot channel lengths differ")
        if (self.speeds < 0).any():
            raise GridStructureError("negative speed")
        if (self.travel_times <= 0).any():
            raise GridStructureError("non-positive travel time")
        lv = self.congestion
        if not np.array_equal(lv, np.round(lv)) or lv.min() < 1 or lv.max() > N_CONGESTION_LEVELS:
            raise GridStructureError("congestion levels must be integers in range")


def snapshot_to_json_dict(snapshot: TrafficSnapshot) -> dict:
    return {
        "timestamp": snapshot.timestamp,
        "speeds": [float(v) for v in snapshot.speeds],
        "congestion": [int(v) for v in snapshot.congestion],
        "travel_times": [float(v) for v in snapshot.travel_times],
    }


def snapshot_from_json_dict(doc: dict) -> TrafficSnapshot:
    try:
        return TrafficSnapshot(
            timestamp=str(doc["timestamp"]),
            speeds=np.asarray(doc["speeds"], dtype=np.float64),
            congestion=np.asarray(doc["congestion"], dtype=np.float64),
            travel_times=np.asarray(doc["travel_times"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GridStructureError(f"bad snapshot document: {exc}") from exc


@dataclass(frozen=True)
class ChannelScaler:
    lo: float
    hi: float
    transform: str  # "linear" | "log-linear"

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError("scaler needs hi > lo")
        if self.transform not in ("linear", "log-linear"):
            raise ValueError(f"unknown transform {self.transform!r}")

    def normalize(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.transform == "log-linear":
            v = np.log(np.clip(v, 1e-12, None))
            lo, hi = math.log(self.lo), math.log(self.hi)
        else:
            lo, hi = self.lo, self.hi
        return 2.0 * (v - lo) / (hi - lo) - 1.0

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.transform == "log-linear":
            lo, hi = math.log(self.lo), math.log(self.hi)
            return np.exp(lo + (u + 1.0) * 0.5 * (hi - lo))
        return self.lo + (u + 1.0) * 0.5 * (self.hi - self.lo)


@dataclass(frozen=True)
class FeatureScaler:
    speed: ChannelScaler
    congestion: ChannelScaler
    travel_time: ChannelScaler

    @staticmethod
    def default() -> "FeatureScaler":
        return FeatureScaler(
            speed=ChannelScaler(0.0, MAX_SPEED_KMH, "linear"),
            congestion=ChannelScaler(1.0, float(N_CONGESTION_LEVELS), "linear"),
            travel_time=ChannelScaler(*TRAVEL_TIME_RANGE_S, "log-linear"),
        )

    def to_json_dict(self) -> dict:
        return {
            name: {"lo": ch.lo, "hi": ch.hi, "transform": ch.transform}
            for name, ch in (
                ("speed", self.speed),
                ("congestion", self.congestion),
                ("travel_time", self.travel_time),
            )
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "FeatureScaler":
        return FeatureScaler(
            **{
                name: ChannelScaler(doc[name]["lo"], doc[name]["hi"], doc[name]["transform"])
                for name in ("speed", "congestion", "travel_time")
            }
        )


def save_scaler(path, scaler: FeatureScaler) -> None:
    with open(str(path), "w") as f:
        json.dump(scaler.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_scaler(path) -> FeatureScaler:
    with open(str(path)) as f:
        return FeatureScaler.from_json_dict(json.load(f))


# -- grids ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrafficGrid:
    values: np.ndarray  # (H, W, 3) in [-1, 1]
    pad_mask: np.ndarray  # (H, W) bool, True = real road

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_roads(self) -> int:
        return int(self.pad_mask.sum())


class ClampCounter:
    """Counts values clamped into range during packing (never aborts)."""

    def __init__(self):
        self.count = 0


def pack_grid(
    snapshot: TrafficSnapshot,
    scaler: FeatureScaler,
    clamp_counter: ClampCounter | None = None,
) -> TrafficGrid:
    """Lay roads out row-major by id into an (H, W, 3) image in [-1, 1]."""
    n = snapshot.n_roads
    n_padded = pad_target(n)
    side = math.isqrt(n_padded)
    raw = np.stack(
        [
            scaler.speed.normalize(snapshot.speeds),
            scaler.congestion.normalize(snapshot.congestion),
            scaler.travel_time.normalize(snapshot.travel_times),
        ],
        axis=1,
    )
    clamped = np.clip(raw, -1.0, 1.0)
    if clamp_counter is not None:
        clamp_counter.count += int((clamped != raw).sum())
    values = np.zeros((n_padded, 3))
    values[:n] = clamped
    mask = np.zeros(n_padded, dtype=bool)
    mask[:n] = True
    return TrafficGrid(values=values.reshape(side, side, 3), pad_mask=mask.reshape(side, side))


def unpack_grid(
    grid: TrafficGrid,
    scaler: FeatureScaler,
    n_roads: int | None = None,
    timestamp: str = "1970-01-01T00:00:00",
) -> TrafficSnapshot:
    """Inverse of pack_grid on masked cells; clamps to physical ranges."""
    mask = grid.pad_mask.reshape(-1)
    if n_roads is not None and int(mask.sum()) != n_roads:
        raise GridStructureError(f"mask covers {int(mask.sum())} roads, expected {n_roads}")
    flat = grid.values.reshape(-1, 3)[mask]
    u = np.clip(flat, -1.0, 1.0)
    speeds = np.clip(scaler.speed.denormalize(u[:, 0]), 0.0, scaler.speed.hi)
    # nearest discrete level; exact midpoints round down
    raw_level = scaler.congestion.denormalize(u[:, 1])
    levels = np.clip(np.ceil(raw_level - 0.5), scaler.congestion.lo, scaler.congestion.hi)
    times = np.clip(scaler.travel_time.denormalize(u[:, 2]), *TRAVEL_TIME_RANGE_S)
    return TrafficSnapshot(
        timestamp=timestamp, speeds=speeds, congestion=levels, travel_times=times
    )
