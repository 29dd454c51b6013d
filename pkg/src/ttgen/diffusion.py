"""Noise schedule, forward noising, posterior mean, and ancestral sampling.

The reverse step uses a fixed variance of beta_t and adds no noise at the
final step.  Every random draw comes from a caller-supplied stream, one per
chain, so sampled grids do not depend on how chains are batched together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import rng_for

BETA_START = 0.00085
BETA_END = 0.012
PAPER_T = 1000
DESK_T = 200


class DiffusionError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite values during sampling at step t={step}")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray  # betas[i] is beta_{i+1}
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 2 or len(self.betas) != self.T:
            raise DiffusionError("schedule needs T >= 2 betas")
        b = self.betas
        if b[0] <= 0.0 or b[-1] >= 1.0 or (np.diff(b) <= 0.0).any():
            raise DiffusionError("betas must be strictly increasing within (0, 1)")

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise DiffusionError(f"step t={t} outside [1, {self.T}]")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t)])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t)])

    def to_json_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}


def make_linear_schedule(T: int, beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    if T < 2:
        raise DiffusionError("T must be >= 2")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise DiffusionError("need 0 < beta_start < beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def schedule_from_json_dict(doc: dict) -> NoiseSchedule:
    return make_linear_schedule(int(doc["T"]), float(doc["beta_start"]), float(doc["beta_end"]))


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    if x0.shape != eps.shape:
        raise DiffusionError(f"shape mismatch {x0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_sample_batch(
    x0: np.ndarray, ts: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Forward noising with one timestep per leading-axis element."""
    if x0.shape != eps.shape:
        raise DiffusionError(f"shape mismatch {x0.shape} vs {eps.shape}")
    ts = np.asarray(ts, dtype=np.int64)
    if ts.min() < 1 or ts.max() > schedule.T:
        raise DiffusionError(f"steps outside [1, {schedule.T}]")
    ab = schedule.alpha_bars[ts - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean(x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    if x_t.shape != eps_hat.shape:
        raise DiffusionError(f"shape mismatch {x_t.shape} vs {eps_hat.shape}")
    beta = schedule.beta(t)
    ab = schedule.alpha_bar(t)
    return (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha(t))


def ddpm_step(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, z: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """One reverse step; no noise is added at t = 1."""
    mu = posterior_mean(x_t, t, eps_hat, schedule)
    if t == 1:
        return mu
    return mu + np.sqrt(schedule.beta(t)) * z


def sample_batch(eps_fn, shape, schedule: NoiseSchedule, seeds, clamp: bool = True) -> np.ndarray:
    """Run one reverse chain per seed; eps_fn maps (B, *shape), t -> (B, *shape).

    Each chain draws from its own counter-based stream keyed by its seed, so
    the result for a given seed never depends on the other chains present.
    """
    rngs = [rng_for(int(s), "sample") for s in seeds]
    x = np.stack([rng.standard_normal(shape) for rng in rngs])
    for t in range(schedule.T, 0, -1):
        eps_hat = np.asarray(eps_fn(x, t))
        if eps_hat.shape != x.shape:
            raise DiffusionError(f"noise prediction shape {eps_hat.shape}, expected {x.shape}")
        if t > 1:
            z = np.stack([rng.standard_normal(shape) for rng in rngs])
        else:
            z = np.zeros_like(x)
        x = ddpm_step(x, t, eps_hat, z, schedule)
        if not np.isfinite(x).all():
            raise DivergenceError(t)
    return np.clip(x, -1.0, 1.0) if clamp else x


def sample(eps_fn, shape, schedule: NoiseSchedule, seed: int, clamp: bool = True) -> np.ndarray:
    """Single-chain sampler; eps_fn maps (*shape), t -> (*shape)."""

    def batched(xb, t):
        return np.asarray(eps_fn(xb[0], t))[None]

    return sample_batch(batched, shape, schedule, [seed], clamp=clamp)[0]
