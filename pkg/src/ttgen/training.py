"""End-to-end optimisation of the text-conditioned traffic denoiser.

The trainable state is a single flat ParamStore holding both the text encoder
and the denoiser, so one adam_step updates everything the loss touches.  All
randomness is drawn from named streams keyed on the training seed: "init" for
parameter init, ("perm", epoch) for the shuffle, and ("step", step) for the
per-step timestep/noise draws.  That keying is what makes resumption from a
checkpoint bit-identical to the uninterrupted run.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .denoiser import ArchConfig, init_denoiser, predict_noise
from .diffusion import DESK_T, NoiseSchedule, make_linear_schedule, q_sample_batch, schedule_from_json_dict
from .roadnet import FeatureScaler, adjacency_from_graph, build_normalized_adjacency, pack_grid
from .scenario import DATASET_FORMAT_VERSION, Dataset
from .tensor import (
    ParamStore,
    Tensor,
    adam_step,
    backward,
    load_checkpoint,
    mse,
    rng_for,
    save_checkpoint,
)
from .textenc import TextEncConfig, Vocabulary, encode, init_text_encoder, tokenize

DESK_LR = 1e-3
PAPER_LR = 1e-5
SMOOTH_WINDOW = 50


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 4
    learning_rate: float = DESK_LR
    seed: int = 0
    T: int = DESK_T
    gcn_layers: int = 2
    gcn_mode: str = "replace"
    ema_decay: float | None = None
    checkpoint_every: int = 0  # 0 = only the final checkpoint

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be > 0")
        if self.checkpoint_every < 0:
            raise TrainingError("checkpoint_every must be >= 0")
        if self.ema_decay is not None and not 0.0 < self.ema_decay < 1.0:
            raise TrainingError("ema_decay must lie in (0, 1)")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "T": self.T,
            "gcn_layers": self.gcn_layers,
            "gcn_mode": self.gcn_mode,
            "ema_decay": self.ema_decay,
            "checkpoint_every": self.checkpoint_every,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "TrainConfig":
        return TrainConfig(**doc)


@dataclass(frozen=True)
class StepReport:
    step: int
    loss: float
    smoothed_loss: float  # mean over the trailing SMOOTH_WINDOW steps
    grad_norm: float
    wall_time_s: float

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "smoothed_loss": self.smoothed_loss,
            "grad_norm": self.grad_norm,
            "wall_time_s": self.wall_time_s,
        }


@dataclass
class Model:
    """Everything sampling needs: parameters plus the frozen configs."""

    store: ParamStore
    arch: ArchConfig
    text_cfg: TextEncConfig
    schedule: NoiseSchedule
    vocab: Vocabulary
    a_hat: np.ndarray  # (n_padded, n_padded) normalized adjacency
    scaler: FeatureScaler
    n_roads: int
    ema: dict[str, np.ndarray] | None = None
    sidecar: dict | None = None

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.a_hat.shape[0])


@dataclass(frozen=True)
class TrainData:
    """Pre-tokenized prompts and pre-packed grids for a list of dataset rows."""

    ids: np.ndarray  # (n, l_max) int64
    mask: np.ndarray  # (n, l_max) float
    grids: np.ndarray  # (n, channels, H, W) in [-1, 1]
    pair_ids: np.ndarray  # (n,) row index into dataset.pairs

    @property
    def n(self) -> int:
        return self.grids.shape[0]

    def select(self, rows) -> "TrainData":
        rows = np.asarray(rows, dtype=np.int64)
        return TrainData(self.ids[rows], self.mask[rows], self.grids[rows], self.pair_ids[rows])


@dataclass
class TrainResult:
    model: Model
    reports: list[StepReport]
    checkpoint_path: str


def check_manifest(dataset: Dataset) -> None:
    m = dataset.manifest
    if m.get("format_version") != DATASET_FORMAT_VERSION:
        raise TrainingError(f"unsupported dataset format_version {m.get('format_version')}")
    if m.get("n_pairs") != len(dataset.pairs):
        raise TrainingError(f"manifest claims {m.get('n_pairs')} pairs, found {len(dataset.pairs)}")
    if "config_hash" not in m:
        raise TrainingError("manifest is missing config_hash")


def build_model(dataset: Dataset, config: TrainConfig, arch: ArchConfig | None = None) -> Model:
    """Fresh parameters from the "init" stream; text encoder first, then denoiser."""
    vocab = Vocabulary(dataset.vocab_tokens)
    if arch is None:
        arch = ArchConfig(gcn_layers=config.gcn_layers, gcn_mode=config.gcn_mode)
    elif (arch.gcn_layers, arch.gcn_mode) != (config.gcn_layers, config.gcn_mode):
        raise TrainingError("arch disagrees with the train config's gcn settings")
    text_cfg = TextEncConfig(vocab_size=vocab.size, d_ctx=arch.d_ctx, l_max=arch.l_max)
    schedule = make_linear_schedule(config.T)
    a_hat = build_normalized_adjacency(adjacency_from_graph(dataset.graph)).entries
    store = ParamStore()
    rng = rng_for(config.seed, "init")
    init_text_encoder(store, text_cfg, rng)
    init_denoiser(store, arch, rng)
    ema = store.snapshot() if config.ema_decay is not None else None
    return Model(
        store=store,
        arch=arch,
        text_cfg=text_cfg,
        schedule=schedule,
        vocab=vocab,
        a_hat=a_hat,
        scaler=dataset.scaler,
        n_roads=dataset.graph.n_roads,
        ema=ema,
    )


def prepare_pairs(dataset: Dataset, rows, vocab: Vocabulary, text_cfg: TextEncConfig) -> TrainData:
    rows = [int(r) for r in rows]
    if not rows:
        raise TrainingError("no rows to prepare")
    ids = np.zeros((len(rows), text_cfg.l_max), dtype=np.int64)
    mask = np.zeros((len(rows), text_cfg.l_max))
    grids = []
    for out_row, pair_row in enumerate(rows):
        pair = dataset.pairs[pair_row]
        seq = tokenize(pair.text, vocab, text_cfg.l_max)
        ids[out_row] = seq.ids
        mask[out_row] = seq.mask.astype(np.float64)
        grids.append(pack_grid(pair.snapshot, dataset.scaler).values.transpose(2, 0, 1))
    return TrainData(ids=ids, mask=mask, grids=np.stack(grids), pair_ids=np.asarray(rows, dtype=np.int64))


def loss_step(model: Model, batch: TrainData, rng: np.random.Generator, predictor=None) -> Tensor:
    """MSE between drawn noise and the model's prediction, mean over everything.

    One timestep is drawn per example.  `predictor` swaps out predict_noise for
    tests; it receives (x_t Tensor, ts, context) and must return a Tensor.
    """
    if batch.n == 0:
        raise TrainingError("empty batch")
    ts = rng.integers(1, model.schedule.T + 1, size=batch.n)
    eps = rng.standard_normal(batch.grids.shape)
    x_t = q_sample_batch(batch.grids, ts, eps, model.schedule)
    context = encode(model.store, model.text_cfg, batch.ids, batch.mask)
    if predictor is None:
        eps_hat = predict_noise(model.store, model.arch, Tensor(x_t), ts, context, Tensor(model.a_hat))
    else:
        eps_hat = predictor(Tensor(x_t), ts, context)
    flat = eps_hat.data.reshape(batch.n, -1)
    finite = np.isfinite(flat).all(axis=1)
    if not finite.all():
        bad = batch.pair_ids[~finite]
        raise TrainingError(f"non-finite prediction for pair id(s) {bad.tolist()}")
    loss = mse(eps_hat, Tensor(eps))
    if not np.isfinite(loss.data):
        per = ((flat - eps.reshape(batch.n, -1)) ** 2).mean(axis=1)
        worst = int(batch.pair_ids[int(np.argmax(np.where(np.isfinite(per), per, np.inf)))])
        raise TrainingError(f"non-finite loss; worst offender is pair id {worst}")
    return loss


def _ema_update(ema: dict[str, np.ndarray], store: ParamStore, decay: float) -> None:
    for name, p in store.items():
        ema[name] *= decay
        ema[name] += (1.0 - decay) * p.data


def _save_model(path, model: Model, dataset: Dataset, config: TrainConfig, step: int, window) -> None:
    sidecar = {
        "format": 1,
        "step": step,
        "dataset_config_hash": dataset.config_hash,
        "n_roads": dataset.graph.n_roads,
        "train_config": config.to_json_dict(),
        "arch": model.arch.to_json_dict(),
        "text_encoder": model.text_cfg.to_json_dict(),
        "schedule": model.schedule.to_json_dict(),
        "recent_losses": [float(v) for v in window],
    }
    save_checkpoint(path, model.store, sidecar, ema=model.ema)
    model.sidecar = sidecar


def train(
    dataset: Dataset,
    config: TrainConfig,
    out_path,
    resume_from=None,
    report_path=None,
    arch: ArchConfig | None = None,
) -> TrainResult:
    """Seeded shuffled batches, one adam step each, periodic atomic checkpoints.

    Reports are appended to `report_path` as JSON lines when given.  Resuming
    replays the interrupted epoch's permutation from the recorded step, so the
    loss trajectory (and the smoothing window, which travels in the sidecar)
    continues exactly where it stopped.
    """
    check_manifest(dataset)
    train_rows = dataset.split["train"]
    if not train_rows:
        raise TrainingError("empty training split")

    if resume_from is not None:
        store, sidecar, ema = load_checkpoint(resume_from)
        if sidecar.get("dataset_config_hash") != dataset.config_hash:
            raise TrainingError("checkpoint was trained against a different dataset configuration")
        saved_cfg = dict(sidecar.get("train_config") or {})
        mine = config.to_json_dict()
        # epochs/checkpoint_every shape the run length, not the trajectory
        for free in ("epochs", "checkpoint_every"):
            saved_cfg.pop(free, None)
            mine.pop(free, None)
        if saved_cfg != mine:
            raise TrainingError("resume requires the original train config")
        saved_arch = ArchConfig.from_json_dict(sidecar["arch"])
        if arch is not None and arch != saved_arch:
            raise TrainingError("resume requires the original architecture")
        model = Model(
            store=store,
            arch=saved_arch,
            text_cfg=TextEncConfig.from_json_dict(sidecar["text_encoder"]),
            schedule=schedule_from_json_dict(sidecar["schedule"]),
            vocab=Vocabulary(dataset.vocab_tokens),
            a_hat=build_normalized_adjacency(adjacency_from_graph(dataset.graph)).entries,
            scaler=dataset.scaler,
            n_roads=dataset.graph.n_roads,
            ema=ema,
            sidecar=sidecar,
        )
        if config.ema_decay is not None and model.ema is None:
            raise TrainingError("config enables averaging but the checkpoint has none")
        start = int(sidecar["step"])
        window = deque(sidecar.get("recent_losses", []), maxlen=SMOOTH_WINDOW)
    else:
        model = build_model(dataset, config, arch=arch)
        start = 0
        window = deque(maxlen=SMOOTH_WINDOW)

    data = prepare_pairs(dataset, train_rows, model.vocab, model.text_cfg)
    steps_per_epoch = math.ceil(data.n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if start > total_steps:
        raise TrainingError(f"checkpoint step {start} is beyond the configured {total_steps} steps")

    reports: list[StepReport] = []
    report_f = open(report_path, "a") if report_path is not None else None
    t0 = time.monotonic()
    perm_epoch = -1
    perm = None
    try:
        for step in range(start, total_steps):
            epoch = step // steps_per_epoch
            if epoch != perm_epoch:
                perm = rng_for(config.seed, "perm", epoch).permutation(data.n)
                perm_epoch = epoch
            pos = step % steps_per_epoch
            rows = perm[pos * config.batch_size : (pos + 1) * config.batch_size]
            model.store.zero_grad()
            loss = loss_step(model, data.select(rows), rng_for(config.seed, "step", step))
            backward(loss)
            grad_norm = model.store.grad_norm()
            adam_step(model.store, config.learning_rate)
            if model.ema is not None and config.ema_decay is not None:
                _ema_update(model.ema, model.store, config.ema_decay)
            window.append(float(loss.data))
            reports.append(
                StepReport(
                    step=step + 1,
                    loss=float(loss.data),
                    smoothed_loss=float(np.mean(window)),
                    grad_norm=grad_norm,
                    wall_time_s=time.monotonic() - t0,
                )
            )
            if report_f is not None:
                report_f.write(json.dumps(reports[-1].to_json_dict()) + "\n")
                report_f.flush()
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 and step + 1 < total_steps:
                _save_model(out_path, model, dataset, config, step + 1, window)
        _save_model(out_path, model, dataset, config, total_steps, window)
    finally:
        if report_f is not None:
            report_f.close()
    return TrainResult(model=model, reports=reports, checkpoint_path=str(out_path))


def load_model(path, dataset: Dataset, use_ema: bool = False) -> Model:
    """Rebuild a sampling-ready Model; refuses checkpoints from other datasets."""
    store, sidecar, ema = load_checkpoint(path)
    if sidecar.get("dataset_config_hash") != dataset.config_hash:
        raise TrainingError("checkpoint was trained against a different dataset configuration")
    text_cfg = TextEncConfig.from_json_dict(sidecar["text_encoder"])
    vocab = Vocabulary(dataset.vocab_tokens)
    if vocab.size != text_cfg.vocab_size:
        raise TrainingError("dataset vocabulary size disagrees with the checkpoint")
    if use_ema:
        if ema is None:
            raise TrainingError("checkpoint holds no parameter average")
        store.load_values(ema)
    return Model(
        store=store,
        arch=ArchConfig.from_json_dict(sidecar["arch"]),
        text_cfg=text_cfg,
        schedule=schedule_from_json_dict(sidecar["schedule"]),
        vocab=vocab,
        a_hat=build_normalized_adjacency(adjacency_from_graph(dataset.graph)).entries,
        scaler=dataset.scaler,
        n_roads=dataset.graph.n_roads,
        ema=ema,
        sidecar=sidecar,
    )
