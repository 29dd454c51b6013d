"""Synthetic scenario generator: road networks, traffic dynamics, text prompts.

Ground truth comes from a parametric simulator with known causal structure:
per-road free-flow speeds, shared diurnal rush-hour dips, and localized
abnormal events whose influence decays by hop distance.  Text prompts are
rendered from a fixed template over a closed vocabulary, so every dataset is
exactly reproducible from its config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .roadnet import (
    FeatureScaler,
    Road,
    RoadGraph,
    TrafficSnapshot,
    grid_side,
    save_graph,
    save_scaler,
    load_graph,
    load_scaler,
)
from .tensor import config_hash, rng_for
from .textenc import SPECIAL_TOKENS

EPOCH = datetime(2024, 1, 1)  # a Monday

WEEKDAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")

EVENT_KINDS = ("accident", "construction", "closure", "weather", "gathering")

KIND_PHRASES = {
    "accident": "traffic accident",
    "construction": "road construction",
    "closure": "road closure",
    "weather": "weather event",
    "gathering": "public gathering",
}

SEVERITY_CLASSES = ("minor", "general", "severe")

HOP_DECAY = 0.5
RAMP_FRACTION = 0.2
SPEED_FLOOR_KMH = 2.0

# rush-hour dips shared by every road: (center hour, full width hours, depth)
DEFAULT_DIPS = ((8.5, 5.0, 0.45), (18.0, 6.0, 0.5))

DATASET_FORMAT_VERSION = 1


class ScenarioError(ValueError):
    pass


def iso(t: datetime) -> str:
    return t.strftime("%Y-%m-%dT%H:%M:%S")


def parse_iso(s: str) -> datetime:
    try:
        return datetime.strptime(s, "%Y-%m-%dT%H:%M:%S")
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad timestamp {s!r}, want YYYY-MM-DDTHH:MM:SS") from exc


def severity_class(severity: float) -> str:
    if severity < 1.0 / 3.0:
        return "minor"
    if severity < 2.0 / 3.0:
        return "general"
    return "severe"


@dataclass(frozen=True)
class EventSpec:
    kind: str
    epicenter: int | None  # None = whole network (weather only)
    severity: float
    start: datetime
    duration_min: float
    hop_radius: int = 3

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if self.epicenter is None and self.kind != "weather":
            raise ScenarioError("only weather events may cover the whole network")
        if not 0.0 <= self.severity <= 1.0:
            raise ScenarioError("severity must lie in [0, 1]")
        if self.duration_min <= 0:
            raise ScenarioError("duration must be positive")
        if self.hop_radius < 0:
            raise ScenarioError("hop_radius must be >= 0")

    def active_at(self, t: datetime) -> bool:
        minutes = (t - self.start).total_seconds() / 60.0
        return 0.0 <= minutes < self.duration_min

    def ramp(self, t: datetime) -> float:
        """0 outside the window, rising/falling linearly over its edges."""
        tau = (t - self.start).total_seconds() / 60.0 / self.duration_min
        if tau < 0.0 or tau >= 1.0:
            return 0.0
        return min(1.0, tau / RAMP_FRACTION, (1.0 - tau) / RAMP_FRACTION)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    n_roads: int
    n_days: int
    sample_interval: int = 4  # minutes
    events_per_day: float = 2.0
    noise_std: float = 0.02

    def __post_init__(self):
        if self.n_roads < 4:
            raise ScenarioError("need at least 4 roads")
        if self.n_days < 1:
            raise ScenarioError("need at least one day")
        if self.sample_interval < 1 or 1440 % self.sample_interval != 0:
            raise ScenarioError("sample_interval must divide 1440")
        if self.events_per_day < 0:
            raise ScenarioError("events_per_day must be >= 0")
        if self.noise_std < 0:
            raise ScenarioError("noise_std must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_roads": self.n_roads,
            "n_days": self.n_days,
            "sample_interval": self.sample_interval,
            "events_per_day": self.events_per_day,
            "noise_std": self.noise_std,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ScenarioConfig":
        return ScenarioConfig(
            seed=int(doc["seed"]),
            n_roads=int(doc["n_roads"]),
            n_days=int(doc["n_days"]),
            sample_interval=int(doc.get("sample_interval", 4)),
            events_per_day=float(doc.get("events_per_day", 2.0)),
            noise_std=float(doc.get("noise_std", 0.02)),
        )


@dataclass(frozen=True)
class DiurnalProfile:
    free_flow: np.ndarray  # km/h per road
    dips: tuple[tuple[float, float, float], ...]  # (center hour, width hours, depth)

    def __post_init__(self):
        if (self.free_flow <= 0).any() or (self.free_flow > 120.0).any():
            raise ScenarioError("free-flow speeds must lie in (0, 120] km/h")
        for _, width, depth in self.dips:
            if width <= 0 or not 0.0 <= depth < 1.0:
                raise ScenarioError("dip needs width > 0 and depth in [0, 1)")


def build_profile(seed: int, n_roads: int) -> DiurnalProfile:
    rng = rng_for(seed, "profile")
    free = rng.uniform(40.0, 110.0, size=n_roads)
    return DiurnalProfile(free_flow=free, dips=DEFAULT_DIPS)


def diurnal_factor(dips, hour: float) -> float:
    """Triangular dips with compact support; 1.0 away from rush hours."""
    f = 1.0
    for center, width, depth in dips:
        d = abs(hour - center)
        d = min(d, 24.0 - d)
        f -= depth * max(0.0, 1.0 - 2.0 * d / width)
    return f


# -- network generation --------------------------------------------------------


def _name_pool(n: int) -> list[str]:
    names: list[str] = []
    ring = 1
    number = 1
    while len(names) < n:
        for direction in ("East", "West", "North", "South"):
            names.append(f"Ring {ring} {direction}")
        for kind in ("Avenue", "Street", "Boulevard"):
            names.append(f"{kind} {number}")
        ring += 1
        number += 1
    return names[:n]


def generate_network(seed: int, n_roads: int) -> RoadGraph:
    """Connected lattice with seeded diagonal shortcuts and readable names."""
    if n_roads < 4:
        raise ScenarioError("need at least 4 roads")
    rng = rng_for(seed, "network")
    cols = grid_side(n_roads)
    edges: list[tuple[int, int]] = []
    for i in range(n_roads):
        r, c = divmod(i, cols)
        if c > 0:
            edges.append((i - 1, i))
        if r > 0:
            edges.append((i - cols, i))
        if r > 0 and c > 0 and rng.random() < 0.3:
            edges.append((i - cols - 1, i))
    lengths = rng.uniform(150.0, 900.0, size=n_roads)
    names = _name_pool(n_roads)
    spacing = 250.0
    roads = []
    for i in range(n_roads):
        r, c = divmod(i, cols)
        x, y = c * spacing, r * spacing
        half = min(float(lengths[i]), 0.8 * spacing) / 2.0
        if (r + c) % 2 == 0:
            polyline = ((x - half, y), (x + half, y))
        else:
            polyline = ((x, y - half), (x, y + half))
        roads.append(Road(road_id=i, name=names[i], length_m=float(lengths[i]), polyline=polyline))
    return RoadGraph(roads=tuple(roads), edges=tuple(edges))


# -- simulation ----------------------------------------------------------------


def _event_road_factors(graph: RoadGraph, event: EventSpec, t: datetime) -> np.ndarray:
    n = graph.n_roads
    ramp = event.ramp(t)
    if ramp == 0.0 or event.severity == 0.0:
        return np.ones(n)
    if event.epicenter is None:
        return np.full(n, 1.0 - event.severity * ramp)
    factors = np.ones(n)
    hops = graph.hop_distances(event.epicenter)
    reach = (hops >= 0) & (hops <= event.hop_radius)
    factors[reach] = 1.0 - event.severity * ramp * HOP_DECAY ** hops[reach]
    return factors


def simulate_interval(
    graph: RoadGraph,
    profile: DiurnalProfile,
    events: list[EventSpec],
    timestamp: datetime,
    rng: np.random.Generator | None = None,
    noise_std: float = 0.0,
) -> TrafficSnapshot:
    """speed = free-flow x diurnal x event factors x (1 + noise), floored."""
    free = profile.free_flow
    hour = timestamp.hour + timestamp.minute / 60.0 + timestamp.second / 3600.0
    speeds = free * diurnal_factor(profile.dips, hour)
    for event in events:
        speeds = speeds * _event_road_factors(graph, event, timestamp)
    if noise_std > 0.0:
        if rng is None:
            raise ScenarioError("noise_std > 0 needs an rng")
        speeds = speeds * (1.0 + rng.normal(0.0, noise_std, size=graph.n_roads))
    speeds = np.maximum(speeds, SPEED_FLOOR_KMH)
    ratio = speeds / free
    congestion = np.where(
        ratio >= 0.75, 1.0, np.where(ratio >= 0.5, 2.0, np.where(ratio >= 0.25, 3.0, 4.0))
    )
    lengths = np.array([road.length_m for road in graph.roads])
    travel_times = 3.6 * lengths / speeds
    return TrafficSnapshot(
        timestamp=iso(timestamp), speeds=speeds, congestion=congestion, travel_times=travel_times
    )


# -- text rendering ------------------------------------------------------------


@dataclass(frozen=True)
class TextPrompt:
    text: str
    structured: dict


def text_from_structured(structured: dict) -> str:
    """Deterministic template over the structured prompt form."""
    t = parse_iso(structured["timestamp"])
    parts = [f"{WEEKDAYS[t.weekday()]}, {t.hour:02d}:{t.minute:02d}."]
    for event in structured.get("events", ()):
        kind = event.get("kind")
        if kind not in KIND_PHRASES:
            raise ScenarioError(f"unknown event kind {kind!r}")
        cls = event.get("severity_class")
        if cls not in SEVERITY_CLASSES:
            raise ScenarioError(f"unknown severity class {cls!r}")
        road = event.get("road")
        if road is None:
            if kind != "weather":
                raise ScenarioError("only weather events may cover the whole network")
            parts.append(f"A {cls} {KIND_PHRASES[kind]} across the network.")
        else:
            parts.append(f"A {cls} {KIND_PHRASES[kind]} on {road}.")
    return " ".join(parts)


def render_text(timestamp: datetime, events: list[EventSpec], graph: RoadGraph) -> TextPrompt:
    ordered = sorted(events, key=lambda e: -1 if e.epicenter is None else e.epicenter)
    structured = {
        "timestamp": iso(timestamp),
        "events": [
            {
                "kind": e.kind,
                "road": None if e.epicenter is None else graph.name_of(e.epicenter),
                "severity_class": severity_class(e.severity),
            }
            for e in ordered
        ],
    }
    return TextPrompt(text=text_from_structured(structured), structured=structured)


def template_tokens(graph: RoadGraph, sample_interval: int) -> list[str]:
    """Every lowercase word the template can emit for this network."""
    words = {w.lower() for w in WEEKDAYS}
    words |= {f"{h:02d}" for h in range(24)}
    words |= {f"{(k * sample_interval) % 60:02d}" for k in range(1440 // sample_interval)}
    for phrase in KIND_PHRASES.values():
        words |= set(phrase.split())
    words |= set(SEVERITY_CLASSES)
    words |= {"a", "on", "across", "the", "network"}
    for road in graph.roads:
        words |= set(road.name.lower().split())
    return sorted(words)


# -- dataset artifact ----------------------------------------------------------


@dataclass(frozen=True)
class Pair:
    timestamp: str
    text: str
    structured: dict
    snapshot: TrafficSnapshot


@dataclass(frozen=True)
class Dataset:
    graph: RoadGraph
    scaler: FeatureScaler
    pairs: tuple[Pair, ...]
    split: dict
    manifest: dict
    vocab_tokens: tuple[str, ...]

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]


def sample_events_for_day(config: ScenarioConfig, graph: RoadGraph, day: int) -> list[EventSpec]:
    """Poisson event count; each shard derives its stream from (seed, day)."""
    rng = rng_for(config.seed, "events", day)
    count = int(rng.poisson(config.events_per_day))
    day_start = EPOCH + timedelta(days=day)
    events = []
    for _ in range(count):
        kind = EVENT_KINDS[int(rng.integers(len(EVENT_KINDS)))]
        if kind == "weather" and rng.random() < 0.5:
            epicenter = None
        else:
            epicenter = int(rng.integers(graph.n_roads))
        events.append(
            EventSpec(
                kind=kind,
                epicenter=epicenter,
                severity=float(1.0 - rng.random()),
                start=day_start + timedelta(minutes=int(rng.integers(0, 1440))),
                duration_min=float(rng.integers(40, 241)),
                hop_radius=int(rng.integers(1, 5)),
            )
        )
    return events


def _write_jsonl_line(f, pair_doc: dict) -> None:
    f.write(json.dumps(pair_doc, sort_keys=True))
    f.write("\n")


def _pair_doc(prompt: TextPrompt, snapshot: TrafficSnapshot) -> dict:
    return {
        "timestamp": snapshot.timestamp,
        "text": prompt.text,
        "structured": prompt.structured,
        "speeds": [round(float(v), 9) for v in snapshot.speeds],
        "congestion": [int(v) for v in snapshot.congestion],
        "travel_times": [round(float(v), 9) for v in snapshot.travel_times],
    }


def _write_dataset(
    out_dir,
    graph: RoadGraph,
    config_doc: dict,
    pair_docs: list[dict],
    split: dict,
    sample_interval: int,
) -> dict:
    out = Path(str(out_dir))
    out.mkdir(parents=True, exist_ok=True)
    save_graph(out / "graph.json", graph)
    save_scaler(out / "scaler.json", FeatureScaler.default())
    with open(out / "pairs.jsonl", "w") as f:
        for doc in pair_docs:
            _write_jsonl_line(f, doc)
    with open(out / "split.json", "w") as f:
        json.dump(split, f, indent=2, sort_keys=True)
        f.write("\n")
    vocab = {"tokens": list(SPECIAL_TOKENS) + template_tokens(graph, sample_interval)}
    with open(out / "vocab.json", "w") as f:
        json.dump(vocab, f, indent=2, sort_keys=True)
        f.write("\n")
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "config": config_doc,
        "config_hash": config_hash(config_doc),
        "n_pairs": len(pair_docs),
        "n_roads": graph.n_roads,
        "grid_side": grid_side(graph.n_roads),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def build_dataset(config: ScenarioConfig, out_dir) -> dict:
    graph = generate_network(config.seed, config.n_roads)
    profile = build_profile(config.seed, config.n_roads)
    all_events = [
        event for day in range(config.n_days) for event in sample_events_for_day(config, graph, day)
    ]
    ticks_per_day = 1440 // config.sample_interval
    pair_docs = []
    for day in range(config.n_days):
        for tick in range(ticks_per_day):
            t = EPOCH + timedelta(days=day, minutes=tick * config.sample_interval)
            active = [e for e in all_events if e.active_at(t)]
            rng = rng_for(config.seed, "noise", day, tick)
            snapshot = simulate_interval(
                graph, profile, active, t, rng=rng, noise_std=config.noise_std
            )
            prompt = render_text(t, active, graph)
            pair_docs.append(_pair_doc(prompt, snapshot))
    if config.n_days == 1:
        train_days = 1
    else:
        train_days = min(config.n_days - 1, max(1, int(0.8 * config.n_days)))
    n_train = train_days * ticks_per_day
    split = {
        "train": list(range(n_train)),
        "test": list(range(n_train, len(pair_docs))),
        "train_days": train_days,
        "n_days": config.n_days,
    }
    return _write_dataset(
        out_dir, graph, config.to_json_dict(), pair_docs, split, config.sample_interval
    )


# -- the 16-prompt overfit preset ---------------------------------------------

OVERFIT_N_ROADS = 60
OVERFIT_EVENT_ROAD = 27
OVERFIT_SEVERITY = 0.9
OVERFIT_HOP_RADIUS = 3
OVERFIT_DURATION_MIN = 120.0
OVERFIT_STEP_MIN = 80
OVERFIT_OFFSET_MIN = 40


def overfit_timestamps() -> list[datetime]:
    return [EPOCH + timedelta(minutes=OVERFIT_OFFSET_MIN + i * OVERFIT_STEP_MIN) for i in range(16)]


def overfit_heldout_timestamps() -> list[datetime]:
    """Midpoints of the first eight training gaps: new times, same day."""
    return [
        EPOCH + timedelta(minutes=OVERFIT_OFFSET_MIN + OVERFIT_STEP_MIN // 2 + i * OVERFIT_STEP_MIN)
        for i in range(8)
    ]


def overfit_event_at(t: datetime) -> EventSpec:
    """The trained accident, centered on t so the ramp sits at full strength."""
    return EventSpec(
        kind="accident",
        epicenter=OVERFIT_EVENT_ROAD,
        severity=OVERFIT_SEVERITY,
        start=t - timedelta(minutes=OVERFIT_DURATION_MIN / 2.0),
        duration_min=OVERFIT_DURATION_MIN,
        hop_radius=OVERFIT_HOP_RADIUS,
    )


def build_overfit_dataset(out_dir, seed: int = 0) -> dict:
    """16 prompts at distinct times: odd indices time-only, even the accident."""
    graph = generate_network(seed, OVERFIT_N_ROADS)
    profile = build_profile(seed, OVERFIT_N_ROADS)
    pair_docs = []
    for i, t in enumerate(overfit_timestamps()):
        events = [overfit_event_at(t)] if i % 2 == 0 else []
        snapshot = simulate_interval(graph, profile, events, t, noise_std=0.0)
        prompt = render_text(t, events, graph)
        pair_docs.append(_pair_doc(prompt, snapshot))
    split = {"train": list(range(16)), "test": list(range(16)), "train_days": 1, "n_days": 1}
    config_doc = {
        "preset": "overfit16",
        "seed": seed,
        "n_roads": OVERFIT_N_ROADS,
        "n_days": 1,
        "sample_interval": 4,
        "events_per_day": 0.0,
        "noise_std": 0.0,
    }
    return _write_dataset(out_dir, graph, config_doc, pair_docs, split, sample_interval=4)


def load_dataset(path) -> Dataset:
    root = Path(str(path))
    graph = load_graph(root / "graph.json")
    scaler = load_scaler(root / "scaler.json")
    pairs = []
    with open(root / "pairs.jsonl") as f:
        for line in f:
            doc = json.loads(line)
            snapshot = TrafficSnapshot(
                timestamp=doc["timestamp"],
                speeds=np.array(doc["speeds"], dtype=np.float64),
                congestion=np.array(doc["congestion"], dtype=np.float64),
                travel_times=np.array(doc["travel_times"], dtype=np.float64),
            )
            pairs.append(
                Pair(
                    timestamp=doc["timestamp"],
                    text=doc["text"],
                    structured=doc["structured"],
                    snapshot=snapshot,
                )
            )
    with open(root / "split.json") as f:
        split = json.load(f)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    with open(root / "vocab.json") as f:
        vocab_tokens = tuple(json.load(f)["tokens"])
    return Dataset(
        graph=graph,
        scaler=scaler,
        pairs=tuple(pairs),
        split=split,
        manifest=manifest,
        vocab_tokens=vocab_tokens,
    )
