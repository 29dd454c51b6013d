"""Regenerate the committed fixtures and the shared scale constants module.

Captures server responses through the real HTTP layer so the client tests
exercise the exact bytes the API serves. Run from the repository root:

    python frontend/scripts/make_fixtures.py

Requires the ttgen package installed (pip install -e .).
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from ttgen.denoiser import ArchConfig
from ttgen.mapsvg import color_for
from ttgen.scenario import build_overfit_dataset, load_dataset, text_from_structured
from ttgen.service import create_app
from ttgen.training import TrainConfig, train

HERE = Path(__file__).resolve().parent.parent
FIXTURES = HERE / "fixtures"

# small but real model so generate responses have the full shape
ARCH = ArchConfig(gcn_layers=2, gcn_mode="replace", base_width=4, gcn_hidden=4,
                  groups=2, d_ctx=8, temb_base=8, temb_dim=8)
TRAIN = TrainConfig(epochs=1, batch_size=4, learning_rate=1e-3, seed=11, T=40)


def dump(name: str, doc) -> None:
    path = FIXTURES / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        data_dir = Path(tmp) / "data"
        build_overfit_dataset(data_dir, seed=0)
        dataset = load_dataset(data_dir)
        ckpt = Path(tmp) / "model.ckpt"
        train(dataset, TRAIN, ckpt, arch=ARCH)
        client = TestClient(create_app(ckpt, data_dir))

        dump("network.json", client.get("/api/network").json())
        dump("vocab.json", client.get("/api/vocab").json())
        presets = client.get("/api/presets").json()
        dump("presets.json", presets)
        scales = client.get("/api/scales").json()
        dump("scales.json", scales)

        responses = {}
        for preset in presets["presets"]:
            body = client.post("/api/generate", json=preset["request"])
            body.raise_for_status()
            responses[preset["name"]] = body.json()
        dump("preset_responses.json", responses)

        prompts = [{"structured": p.structured, "text": p.text} for p in dataset.pairs]
        extra = [
            {"timestamp": "2024-01-03T07:40:00",
             "events": [{"kind": "weather", "road": None, "severity_class": "severe"}]},
            {"timestamp": "2024-01-07T23:56:00",
             "events": [{"kind": "closure", "road": dataset.graph.name_of(0),
                         "severity_class": "minor"}]},
        ]
        prompts += [{"structured": s, "text": text_from_structured(s)} for s in extra]
        dump("prompts.json", prompts)

        samples = {
            "speed": [0.0, 7.5, 30.0, 59.9, 60.0, 61.3, 90.0, 115.0, 120.0, -5.0, 500.0],
            "travel_time": [0.5, 1.0, 2.0, 42.4, 310.7, 900.0, 1799.0, 1800.0, 2400.0],
            "congestion": [0.0, 1.0, 1.4, 1.5, 2.0, 2.5, 2.6, 3.0, 3.5, 4.0, 9.0],
        }
        triples = [[ch, v, color_for(ch, v)] for ch, vals in samples.items() for v in vals]
        dump("colors.json", triples)

        const_path = HERE / "src" / "scale_constants.ts"
        const_path.write_text(
            "// Generated by scripts/make_fixtures.py from the server scale spec.\n"
            "// Do not edit by hand; regenerate instead.\n\n"
            "export const SCALES = "
            + json.dumps(scales["scales"], indent=2, sort_keys=True)
            + " as const;\n\n"
            "export const CHANNEL_UNITS = "
            + json.dumps(scales["units"], indent=2, sort_keys=True)
            + " as const;\n"
        )
        print(f"wrote {const_path}")


if __name__ == "__main__":
    main()
