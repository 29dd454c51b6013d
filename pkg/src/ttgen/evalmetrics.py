"""Metrics, multi-sample generation, and the layers-by-samples ablation harness.

Generation draws k reverse chains from consecutive seeds, averages the
normalized grids elementwise, and decodes the mean once, so congestion is
quantized after averaging.  Metrics are reported per channel both in physical
units and in normalized grid units.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .denoiser import predict_noise
from .diffusion import DivergenceError, sample_batch
from .roadnet import FeatureScaler, TrafficGrid, TrafficSnapshot, unpack_grid
from .scenario import Dataset
from .tensor import Tensor, no_grad
from .textenc import ContextEmbedding, encode, tokenize
from .training import Model, TrainConfig, load_model, train

CHANNEL_NAMES = ("speed", "congestion", "travel_time")
LAYER_VALUES = (0, 1, 2, 3)
SAMPLE_VALUES = (1, 5, 10)


class EvalError(ValueError):
    pass


# -- error metrics -------------------------------------------------------------


def _stack(snapshots) -> np.ndarray:
    """(n_snapshots, 3, n_roads) float array in physical units."""
    snapshots = list(snapshots)
    if not snapshots:
        raise EvalError("empty snapshot set")
    n = snapshots[0].n_roads
    rows = []
    for s in snapshots:
        if s.n_roads != n:
            raise EvalError(f"road count mismatch: {s.n_roads} vs {n}")
        rows.append(np.stack([s.speeds, s.congestion, s.travel_times]).astype(np.float64))
    return np.stack(rows)


def _diffs(pred, truth) -> np.ndarray:
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise EvalError(f"cardinality mismatch: {len(pred)} vs {len(truth)}")
    p = _stack(pred)
    t = _stack(truth)
    if p.shape != t.shape:
        raise EvalError("road count mismatch between pred and truth")
    return p - t


def mae(pred, truth) -> dict[str, float]:
    d = np.abs(_diffs(pred, truth)).mean(axis=(0, 2))
    return {name: float(v) for name, v in zip(CHANNEL_NAMES, d)}


def rmse(pred, truth) -> dict[str, float]:
    d = _diffs(pred, truth)
    return {name: float(np.sqrt((d[:, i] ** 2).mean())) for i, name in enumerate(CHANNEL_NAMES)}


def _normalized_stack(snapshots, scaler: FeatureScaler) -> np.ndarray:
    phys = _stack(snapshots)
    out = np.empty_like(phys)
    for i, ch in enumerate((scaler.speed, scaler.congestion, scaler.travel_time)):
        out[:, i] = ch.normalize(phys[:, i])
    return out


def normalized_mae(pred, truth, scaler: FeatureScaler) -> dict[str, float]:
    d = np.abs(_normalized_stack(pred, scaler) - _normalized_stack(truth, scaler)).mean(axis=(0, 2))
    return {name: float(v) for name, v in zip(CHANNEL_NAMES, d)}


def normalized_rmse(pred, truth, scaler: FeatureScaler) -> dict[str, float]:
    d = _normalized_stack(pred, scaler) - _normalized_stack(truth, scaler)
    return {name: float(np.sqrt((d[:, i] ** 2).mean())) for i, name in enumerate(CHANNEL_NAMES)}


# -- conditional generation ----------------------------------------------------


@dataclass(frozen=True)
class GenerationResult:
    snapshot: TrafficSnapshot
    grid: np.ndarray  # (channels, H, W) normalized mean over surviving chains
    k: int
    n_diverged: int


def encode_prompt(model: Model, prompt) -> ContextEmbedding:
    seq = tokenize(prompt, model.vocab, model.text_cfg.l_max)
    return encode(model.store, model.text_cfg, seq.ids, seq.mask.astype(np.float64))


def make_eps_fn(model: Model, context: ContextEmbedding):
    """Adapt predict_noise to the sampler by broadcasting one prompt's context."""
    vals = context.values.data
    msk = context.mask
    a_hat = Tensor(model.a_hat)

    def eps_fn(xb: np.ndarray, t: int) -> np.ndarray:
        b = xb.shape[0]
        ctx = ContextEmbedding(
            values=Tensor(np.broadcast_to(vals, (b,) + vals.shape[1:])),
            mask=np.broadcast_to(msk, (b,) + msk.shape[1:]),
        )
        with no_grad():
            out = predict_noise(model.store, model.arch, Tensor(xb), np.full(b, t, dtype=np.int64), ctx, a_hat)
        return out.data

    return eps_fn


def generate_k(model: Model, prompt, k: int, seed: int, timestamp: str = "1970-01-01T00:00:00") -> GenerationResult:
    """k chains from seeds seed..seed+k-1, elementwise mean, one decode."""
    if k < 1:
        raise EvalError("k must be >= 1")
    with no_grad():
        context = encode_prompt(model, prompt)
    eps_fn = make_eps_fn(model, context)
    side = model.grid_side
    shape = (model.arch.channels, side, side)
    seeds = [int(seed) + i for i in range(k)]
    n_diverged = 0
    try:
        grids = list(sample_batch(eps_fn, shape, model.schedule, seeds))
    except DivergenceError:
        # chains are seed-keyed, so rerunning one at a time reproduces the
        # survivors exactly while isolating the divergent ones
        grids = []
        for s in seeds:
            try:
                grids.append(sample_batch(eps_fn, shape, model.schedule, [s])[0])
            except DivergenceError:
                n_diverged += 1
        if not grids:
            raise EvalError(f"all {k} sampling chains diverged")
    mean_grid = np.mean(grids, axis=0)
    mask = (np.arange(side * side) < model.n_roads).reshape(side, side)
    snapshot = unpack_grid(
        TrafficGrid(values=mean_grid.transpose(1, 2, 0), pad_mask=mask),
        model.scaler,
        model.n_roads,
        timestamp,
    )
    return GenerationResult(snapshot=snapshot, grid=mean_grid, k=k, n_diverged=n_diverged)


# -- test-set evaluation -------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    channels: dict  # per channel {"mae": float, "rmse": float}, physical units
    normalized: dict  # same layout in normalized grid units
    n_pairs: int
    k: int
    n_diverged: int
    descriptor: dict

    def __post_init__(self):
        # Cauchy-Schwarz up to float rounding of sqrt(mean of squares)
        for name, cell in self.channels.items():
            if not (np.isfinite(cell["mae"]) and cell["mae"] >= 0 and cell["rmse"] >= cell["mae"] * (1 - 1e-12)):
                raise EvalError(f"metric identity violated for {name}: {cell}")

    def to_json_dict(self) -> dict:
        return {
            "channels": self.channels,
            "normalized": self.normalized,
            "n_pairs": self.n_pairs,
            "k": self.k,
            "n_diverged": self.n_diverged,
            "descriptor": self.descriptor,
        }


def evaluate_testset(
    model: Model,
    dataset: Dataset,
    k: int,
    seed: int,
    rows=None,
    descriptor: dict | None = None,
    generator=None,
) -> MetricReport:
    """generate_k per test pair against its ground truth, aggregated per channel.

    Pair j draws from seeds seed + j*k .. seed + (j+1)*k - 1 so no two pairs
    share a chain.  `generator` swaps out generate_k for tests.
    """
    rows = list(dataset.split["test"] if rows is None else rows)
    if not rows:
        raise EvalError("empty test split")
    gen = generator if generator is not None else generate_k
    preds, truths = [], []
    n_diverged = 0
    for j, row in enumerate(rows):
        pair = dataset.pairs[int(row)]
        res = gen(model, pair.text, k, seed + j * k, timestamp=pair.timestamp)
        preds.append(res.snapshot)
        truths.append(pair.snapshot)
        n_diverged += res.n_diverged
    abs_err = mae(preds, truths)
    sq_err = rmse(preds, truths)
    n_abs = normalized_mae(preds, truths, dataset.scaler)
    n_sq = normalized_rmse(preds, truths, dataset.scaler)
    return MetricReport(
        channels={name: {"mae": abs_err[name], "rmse": sq_err[name]} for name in CHANNEL_NAMES},
        normalized={name: {"mae": n_abs[name], "rmse": n_sq[name]} for name in CHANNEL_NAMES},
        n_pairs=len(rows),
        k=k,
        n_diverged=n_diverged,
        descriptor=descriptor or {},
    )


# -- ablation harness ----------------------------------------------------------


@dataclass(frozen=True)
class AblationCell:
    gcn_layers: int
    samples: int
    report: MetricReport | None
    error: str | None

    def to_json_dict(self) -> dict:
        return {
            "gcn_layers": self.gcn_layers,
            "samples": self.samples,
            "report": self.report.to_json_dict() if self.report is not None else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class AblationGrid:
    cells: tuple[AblationCell, ...]

    def cell(self, gcn_layers: int, samples: int) -> AblationCell:
        for c in self.cells:
            if (c.gcn_layers, c.samples) == (gcn_layers, samples):
                return c
        raise KeyError((gcn_layers, samples))

    def to_json_dict(self) -> dict:
        return {"cells": [c.to_json_dict() for c in self.cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _load_or_train(dataset, cfg, ckpt, arch) -> Model:
    ckpt = Path(str(ckpt))
    if ckpt.exists():
        model = load_model(ckpt, dataset)
        if model.sidecar.get("train_config") == cfg.to_json_dict():
            return model
    return train(dataset, cfg, ckpt, arch=arch).model


def run_ablation(
    dataset: Dataset,
    base_config: TrainConfig,
    work_dir,
    layer_values=LAYER_VALUES,
    sample_values=SAMPLE_VALUES,
    eval_seed: int = 1000,
    arch=None,
    rows=None,
) -> AblationGrid:
    """One model per layer count (shared train seed), evaluated at each k.

    A failing cell records its error and leaves the rest of the grid intact.
    Existing checkpoints with a matching train config are reused.
    """
    work = Path(str(work_dir))
    work.mkdir(parents=True, exist_ok=True)
    cells = []
    for layers in layer_values:
        cfg = dataclasses.replace(base_config, gcn_layers=layers)
        arch_l = dataclasses.replace(arch, gcn_layers=layers) if arch is not None else None
        try:
            model = _load_or_train(dataset, cfg, work / f"ablation_gcn{layers}.ckpt", arch_l)
        except Exception as exc:
            for k in sample_values:
                cells.append(AblationCell(layers, k, None, f"train: {exc}"))
            continue
        for k in sample_values:
            try:
                report = evaluate_testset(
                    model,
                    dataset,
                    k,
                    seed=eval_seed + 7919 * layers + 101 * k,
                    rows=rows,
                    descriptor={"gcn_layers": layers, "samples": k},
                )
                cells.append(AblationCell(layers, k, report, None))
            except Exception as exc:
                cells.append(AblationCell(layers, k, None, str(exc)))
    return AblationGrid(cells=tuple(cells))


def format_ablation_table(grid: AblationGrid, channel: str = "speed") -> str:
    """Aligned rows by layer count, column pairs by sample count."""
    sample_values = sorted({c.samples for c in grid.cells})
    layer_values = sorted({c.gcn_layers for c in grid.cells})
    unit = {"speed": "km/h", "congestion": "level", "travel_time": "s"}[channel]
    header = ["gcn layers"]
    for k in sample_values:
        header += [f"k={k} MAE", f"k={k} RMSE"]
    rows = [header]
    for layers in layer_values:
        row = [str(layers)]
        for k in sample_values:
            c = grid.cell(layers, k)
            if c.report is None:
                row += ["err", "err"]
            else:
                row += [f"{c.report.channels[channel]['mae']:.3f}", f"{c.report.channels[channel]['rmse']:.3f}"]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [f"{channel} channel ({unit})"]
    for r in rows:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
