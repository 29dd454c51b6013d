"""HTTP service over a trained checkpoint: generate snapshots, render maps.

The model and dataset are loaded once at startup and never mutated; every
request samples against that immutable state, so identical seeded requests
return identical bodies. Response JSON is serialized by hand (sorted keys,
fixed separators) to keep seeded responses byte-stable. A semaphore caps
the number of concurrent sampling loops at the worker pool size.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import timedelta
from importlib import resources

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, Response

from .evalmetrics import EvalError, generate_k
from .mapsvg import CHANNEL_UNITS, RenderError, render_map, scale_spec
from .roadnet import (
    GridStructureError,
    snapshot_from_json_dict,
    snapshot_to_json_dict,
)
from .scenario import (
    EPOCH,
    SEVERITY_CLASSES,
    WEEKDAYS,
    Dataset,
    ScenarioError,
    iso,
    load_dataset,
    text_from_structured,
)
from .tensor import model_hash
from .training import Model, load_model

MAX_SAMPLES = 50
DEFAULT_SAMPLES = 10
DEFAULT_BIND = "127.0.0.1:8423"

SCHEMA_NAMES = (
    "error.schema.json",
    "generate_request.schema.json",
    "generate_response.schema.json",
    "health.schema.json",
    "network.schema.json",
    "presets.schema.json",
    "scales.schema.json",
    "snapshot.schema.json",
    "vocab.schema.json",
)


def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise KeyError(f"no shipped schema named {name!r}")
    return json.loads(resources.files("ttgen").joinpath("schemas").joinpath(name).read_text())


def validate_against(name: str, doc) -> None:
    """Validate a response document against one of the shipped schemas.

    Raises jsonschema.ValidationError on mismatch. Imported lazily: the
    service itself does not need jsonschema at runtime, only its tests do.
    """
    import jsonschema
    from referencing import Registry, Resource

    registry = Registry().with_resources(
        (n, Resource.from_contents(load_schema(n))) for n in SCHEMA_NAMES
    )
    jsonschema.Draft202012Validator(load_schema(name), registry=registry).validate(doc)

# leading clause of the prompt template, used to recover a timestamp from free text
_TEMPLATE_HEAD = re.compile(r"^(Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday), (\d{2}):(\d{2})\.")


class ServiceError(Exception):
    """Request-level failure carrying an HTTP status and a stable error code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ServiceState:
    model: Model
    dataset: Dataset
    model_hash: str
    sampler_slots: threading.Semaphore


def _json_bytes(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def _json_response(body: dict, status: int = 200, headers: dict | None = None) -> Response:
    return Response(content=_json_bytes(body), status_code=status,
                    media_type="application/json", headers=headers)


def _error_response(exc: ServiceError) -> Response:
    return _json_response({"error": {"code": exc.code, "message": exc.message}}, status=exc.status)


async def _read_json(request: Request) -> dict:
    raw = await request.body()
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ServiceError(400, "bad_json", f"request body is not valid JSON: {exc}")
    if not isinstance(body, dict):
        raise ServiceError(400, "bad_json", "request body must be a JSON object")
    return body


def derive_seed(text: str, samples: int) -> int:
    """Deterministic fallback seed for requests that do not pin one."""
    import hashlib

    digest = hashlib.sha256(_json_bytes({"samples": samples, "text": text})).digest()
    return int.from_bytes(digest[:4], "big")


def timestamp_for_prompt(text: str, structured: dict | None) -> str:
    """Timestamp echoed on the generated snapshot.

    Structured requests carry one; for free text we recover it from the
    template's leading clause when present, else fall back to the epoch.
    """
    if structured is not None:
        return str(structured["timestamp"])
    m = _TEMPLATE_HEAD.match(text)
    if m:
        day = WEEKDAYS.index(m.group(1))
        hour, minute = int(m.group(2)), int(m.group(3))
        if hour < 24 and minute < 60:
            return iso(EPOCH + timedelta(days=day, hours=hour, minutes=minute))
    return "1970-01-01T00:00:00"


def parse_generate_request(body: dict) -> tuple[str, dict | None, int, int]:
    """Validate a generate request body, returning (text, structured, samples, seed)."""
    unknown = set(body) - {"text", "structured", "samples", "seed"}
    if unknown:
        raise ServiceError(400, "invalid_request", f"unknown fields: {sorted(unknown)}")
    has_text = "text" in body
    has_structured = "structured" in body
    if has_text == has_structured:
        raise ServiceError(400, "invalid_request", "provide exactly one of 'text' or 'structured'")
    structured = None
    if has_text:
        text = body["text"]
        if not isinstance(text, str) or not text.strip():
            raise ServiceError(400, "invalid_request", "'text' must be a non-empty string")
    else:
        structured = body["structured"]
        if not isinstance(structured, dict):
            raise ServiceError(400, "invalid_request", "'structured' must be an object")
        try:
            text = text_from_structured(structured)
        except (ScenarioError, KeyError, TypeError, ValueError) as exc:
            raise ServiceError(400, "invalid_request", f"bad structured prompt: {exc}")
    samples = body.get("samples", DEFAULT_SAMPLES)
    if not isinstance(samples, int) or isinstance(samples, bool) or not 1 <= samples <= MAX_SAMPLES:
        raise ServiceError(400, "invalid_request", f"'samples' must be an integer in [1, {MAX_SAMPLES}]")
    seed = body.get("seed")
    if seed is None:
        seed = derive_seed(text, samples)
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ServiceError(400, "invalid_request", "'seed' must be a non-negative integer")
    return text, structured, samples, seed


def _run_generate(state: ServiceState, body: dict) -> tuple[dict, float]:
    text, structured, samples, seed = parse_generate_request(body)
    t0 = time.perf_counter()
    with state.sampler_slots:
        try:
            result = generate_k(state.model, text, k=samples, seed=seed,
                                timestamp=timestamp_for_prompt(text, structured))
        except EvalError as exc:
            raise ServiceError(500, "sampling_failed", str(exc))
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    response = {
        "snapshot": snapshot_to_json_dict(result.snapshot),
        "prompt": {"text": text, "structured": structured},
        "samples": samples,
        "seed": seed,
        "n_diverged": result.n_diverged,
        "model_hash": state.model_hash,
        "config_hash": state.dataset.config_hash,
    }
    return response, elapsed_ms


def default_presets(dataset: Dataset) -> list[dict]:
    """Canned scenarios: the time-only trio plus one event of each reach."""
    trio = [("night", 1), ("morning peak", 9), ("evening peak", 18)]
    presets = [
        {
            "name": f"{label}, time only",
            "request": {
                "structured": {"timestamp": iso(EPOCH + timedelta(hours=h)), "events": []},
                "samples": DEFAULT_SAMPLES,
            },
        }
        for label, h in trio
    ]
    road = dataset.graph.roads[dataset.graph.n_roads // 2].name
    presets.append({
        "name": "accident scenario",
        "request": {
            "structured": {
                "timestamp": iso(EPOCH + timedelta(days=4, hours=18, minutes=20)),
                "events": [{"kind": "accident", "road": road, "severity_class": SEVERITY_CLASSES[1]}],
            },
            "samples": DEFAULT_SAMPLES,
        },
    })
    presets.append({
        "name": "network-wide weather",
        "request": {
            "structured": {
                "timestamp": iso(EPOCH + timedelta(days=2, hours=7, minutes=40)),
                "events": [{"kind": "weather", "road": None, "severity_class": "severe"}],
            },
            "samples": DEFAULT_SAMPLES,
        },
    })
    return presets


_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>ttgen service</title></head>
<body><h1>ttgen service</h1>
<p>The API is live under <code>/api</code>. No web client has been built into
this service; see <code>GET /api/health</code>, <code>GET /api/presets</code>
and <code>POST /api/generate</code>.</p></body></html>
"""


def create_app(ckpt_path, data_dir, static_dir=None, max_workers: int | None = None) -> FastAPI:
    """Build the service app, loading model and dataset once.

    Raises TrainingError if the checkpoint was trained against a different
    dataset configuration; the caller should treat that as a startup refusal.
    """
    dataset = load_dataset(data_dir)
    model = load_model(ckpt_path, dataset)
    workers = max_workers if max_workers is not None else (os.cpu_count() or 1)
    state = ServiceState(
        model=model,
        dataset=dataset,
        model_hash=model_hash(ckpt_path),
        sampler_slots=threading.Semaphore(workers),
    )
    app = FastAPI(title="ttgen", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.service = state

    @app.exception_handler(ServiceError)
    async def _on_service_error(request: Request, exc: ServiceError):
        return _error_response(exc)

    @app.exception_handler(Exception)
    async def _on_unhandled(request: Request, exc: Exception):
        return _json_response({"error": {"code": "internal", "message": str(exc)}}, status=500)

    @app.get("/api/health")
    def health():
        return _json_response({"status": "ok", "model_hash": state.model_hash})

    @app.get("/api/network")
    def network():
        return _json_response(state.dataset.graph.to_json_dict())

    @app.get("/api/vocab")
    def vocab():
        return _json_response({
            "tokens": list(state.dataset.vocab_tokens),
            "size": len(state.dataset.vocab_tokens),
            "l_max": state.model.text_cfg.l_max,
        })

    @app.get("/api/presets")
    def presets():
        return _json_response({"presets": default_presets(state.dataset)})

    @app.get("/api/scales")
    def scales():
        return _json_response({"scales": scale_spec(), "units": CHANNEL_UNITS})

    @app.post("/api/generate")
    async def generate(request: Request):
        body = await _read_json(request)
        response, elapsed_ms = _run_generate(state, body)
        return _json_response(response, headers={"X-Generation-Time-Ms": f"{elapsed_ms:.1f}"})

    @app.post("/api/render")
    async def render(request: Request):
        body = await _read_json(request)
        unknown = set(body) - {"snapshot", "request", "channel"}
        if unknown:
            raise ServiceError(400, "invalid_request", f"unknown fields: {sorted(unknown)}")
        channel = body.get("channel")
        if ("snapshot" in body) == ("request" in body):
            raise ServiceError(400, "invalid_request", "provide exactly one of 'snapshot' or 'request'")
        if "snapshot" in body:
            if not isinstance(body["snapshot"], dict):
                raise ServiceError(400, "invalid_request", "'snapshot' must be an object")
            try:
                snapshot = snapshot_from_json_dict(body["snapshot"])
            except GridStructureError as exc:
                raise ServiceError(400, "invalid_request", str(exc))
        else:
            if not isinstance(body["request"], dict):
                raise ServiceError(400, "invalid_request", "'request' must be an object")
            generated, _ = _run_generate(state, body["request"])
            snapshot = snapshot_from_json_dict(generated["snapshot"])
        try:
            rendered = render_map(snapshot, state.dataset.graph, channel)
        except RenderError as exc:
            raise ServiceError(400, "invalid_request", str(exc))
        return Response(content=rendered.svg, media_type="image/svg+xml")

    index_file = None
    if static_dir is not None and os.path.isdir(static_dir):
        candidate = os.path.join(static_dir, "index.html")
        index_file = candidate if os.path.isfile(candidate) else None

    if index_file is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    else:

        @app.get("/")
        def placeholder():
            return HTMLResponse(_PLACEHOLDER_PAGE)

    return app


def serve(ckpt_path, data_dir, bind: str | None = None, static_dir=None,
          max_workers: int | None = None) -> None:
    """Run the service until interrupted. CT_BIND overrides the bind address."""
    import uvicorn

    app = create_app(ckpt_path, data_dir, static_dir=static_dir, max_workers=max_workers)
    addr = os.environ.get("CT_BIND", bind or DEFAULT_BIND)
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must look like host:port, got {addr!r}")
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
