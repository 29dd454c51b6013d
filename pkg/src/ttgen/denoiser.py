"""Conditional noise predictor: GCN front-end into a cross-attention UNet.

The grid is unpacked to node layout for graph convolution, repacked, and fed
to a two-level UNet (widths 32/64) whose residual blocks inject a timestep
embedding and whose attention blocks read the text context.  In `replace`
mode the UNet consumes the graph features alone; `concat` stacks them onto
the noisy grid as three extra channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    group_norm,
    matmul,
    relu,
    reshape,
    scale,
    sigmoid,
    silu,
    softmax,
    transpose,
    upsample2x,
)
from .textenc import ContextEmbedding

GCN_MODES = ("replace", "concat")


class DenoiserError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    gcn_layers: int = 2
    gcn_mode: str = "replace"
    channels: int = 3
    base_width: int = 32  # level widths are (base, 2*base)
    gcn_hidden: int = 16
    d_ctx: int = 32
    l_max: int = 24
    temb_base: int = 32
    temb_dim: int = 64
    groups: int = 8

    def __post_init__(self):
        if self.gcn_layers not in (0, 1, 2, 3):
            raise DenoiserError("gcn_layers must be one of 0, 1, 2, 3")
        if self.gcn_mode not in GCN_MODES:
            raise DenoiserError(f"gcn_mode must be one of {GCN_MODES}")
        if self.base_width % self.groups != 0:
            raise DenoiserError("groups must divide base_width")

    @property
    def in_channels(self) -> int:
        return self.channels if self.gcn_mode == "replace" else 2 * self.channels

    def to_json_dict(self) -> dict:
        return {
            "gcn_layers": self.gcn_layers,
            "gcn_mode": self.gcn_mode,
            "channels": self.channels,
            "base_width": self.base_width,
            "gcn_hidden": self.gcn_hidden,
            "d_ctx": self.d_ctx,
            "l_max": self.l_max,
            "temb_base": self.temb_base,
            "temb_dim": self.temb_dim,
            "groups": self.groups,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ArchConfig":
        return ArchConfig(**doc)


# -- timestep embedding --------------------------------------------------------


def sinusoidal_embedding(t_arr: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic base features, distinct for every integer step."""
    t_arr = np.atleast_1d(np.asarray(t_arr, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    args = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def timestep_embedding(params, cfg: ArchConfig, t_arr: np.ndarray) -> Tensor:
    base = Tensor(sinusoidal_embedding(t_arr, cfg.temb_base))
    h = silu(add(matmul(base, params["temb.w1"]), params["temb.b1"]))
    return add(matmul(h, params["temb.w2"]), params["temb.b2"])


# -- GCN front-end -------------------------------------------------------------


def gcn_param_shapes(cfg: ArchConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.channels, cfg.gcn_hidden
    if cfg.gcn_layers == 0:
        return {}
    if cfg.gcn_layers == 1:
        return {"gcn.w": (d, d)}
    if cfg.gcn_layers == 2:
        return {"gcn.w0": (d, h), "gcn.w1": (h, d)}
    return {"gcn.w0": (d, h), "gcn.wm": (h, h), "gcn.w1": (h, d)}


def gcn_forward(x_nodes: Tensor, a_hat: Tensor, params, gcn_layers: int) -> Tensor:
    """Graph convolution over node-layout features (..., n_padded, channels).

    Layer counts: 0 is the identity, 1 is sigmoid(A x W), 2 is the two-weight
    form sigmoid(A relu(A x W0) W1), 3 inserts one extra hidden propagation.
    """
    if x_nodes.shape[-2] != a_hat.shape[-1]:
        raise ShapeError(f"{x_nodes.shape} does not match adjacency {a_hat.shape}")
    if gcn_layers == 0:
        return x_nodes
    if gcn_layers == 1:
        return sigmoid(matmul(a_hat, matmul(x_nodes, params["gcn.w"])))
    h = relu(matmul(a_hat, matmul(x_nodes, params["gcn.w0"])))
    if gcn_layers == 3:
        h = relu(matmul(a_hat, matmul(h, params["gcn.wm"])))
    return sigmoid(matmul(a_hat, matmul(h, params["gcn.w1"])))


# -- cross-attention -----------------------------------------------------------


def effective_context_mask(mask: np.ndarray) -> np.ndarray:
    """Rows with nothing unmasked fall back to the BOS position."""
    eff = np.asarray(mask, dtype=np.float64).copy()
    dead = eff.sum(axis=-1) == 0.0
    if dead.any():
        eff[dead, 0] = 1.0
    return eff


def cross_attention(
    params,
    prefix: str,
    features: Tensor,
    context: ContextEmbedding,
    return_weights: bool = False,
):
    """features (B, L_f, C) attend over context rows; residual output."""
    c = features.shape[-1]
    q = matmul(features, params[f"{prefix}.wq"])
    k = matmul(context.values, params[f"{prefix}.wk"])
    v = matmul(context.values, params[f"{prefix}.wv"])
    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c))
    eff = effective_context_mask(context.mask)
    neg = Tensor(((1.0 - eff) * -1e9)[:, None, :])
    weights = softmax(add(scores, neg), axis=-1)
    out = add(features, matmul(matmul(weights, v), params[f"{prefix}.wo"]))
    if return_weights:
        return out, weights
    return out


# -- UNet ----------------------------------------------------------------------


def _conv_shapes(c_in: int, c_out: int) -> dict[str, tuple[int, ...]]:
    return {"w": (c_out, c_in, 3, 3), "b": (c_out,)}


def _res_shapes(p: str, c_in: int, c_out: int, temb_dim: int) -> dict[str, tuple[int, ...]]:
    shapes = {
        f"{p}.conv1.w": (c_out, c_in, 3, 3),
        f"{p}.conv1.b": (c_out,),
        f"{p}.temb.w": (temb_dim, c_out),
        f"{p}.temb.b": (c_out,),
        f"{p}.conv2.w": (c_out, c_out, 3, 3),
        f"{p}.conv2.b": (c_out,),
    }
    if c_in != c_out:
        shapes[f"{p}.skip.w"] = (c_in, c_out)
    return shapes


def _attn_shapes(p: str, c: int, d_ctx: int) -> dict[str, tuple[int, ...]]:
    return {f"{p}.wq": (c, c), f"{p}.wk": (d_ctx, c), f"{p}.wv": (d_ctx, c), f"{p}.wo": (c, c)}


def denoiser_param_shapes(cfg: ArchConfig) -> dict[str, tuple[int, ...]]:
    w0, w1 = cfg.base_width, 2 * cfg.base_width
    td, dc = cfg.temb_dim, cfg.d_ctx
    shapes: dict[str, tuple[int, ...]] = {}
    shapes.update(gcn_param_shapes(cfg))
    shapes["temb.w1"] = (cfg.temb_base, td)
    shapes["temb.b1"] = (td,)
    shapes["temb.w2"] = (td, td)
    shapes["temb.b2"] = (td,)
    shapes["conv_in.w"] = (w0, cfg.in_channels, 3, 3)
    shapes["conv_in.b"] = (w0,)
    shapes.update(_res_shapes("down0.res0", w0, w0, td))
    shapes.update(_res_shapes("down0.res1", w0, w0, td))
    shapes.update(_attn_shapes("down0.attn", w0, dc))
    shapes["pool.w"] = (w1, w0, 3, 3)
    shapes["pool.b"] = (w1,)
    shapes.update(_res_shapes("down1.res0", w1, w1, td))
    shapes.update(_res_shapes("down1.res1", w1, w1, td))
    shapes.update(_attn_shapes("down1.attn", w1, dc))
    shapes.update(_res_shapes("mid.res0", w1, w1, td))
    shapes.update(_attn_shapes("mid.attn", w1, dc))
    shapes.update(_res_shapes("mid.res1", w1, w1, td))
    shapes.update(_res_shapes("up1.res0", 2 * w1, w1, td))
    shapes.update(_res_shapes("up1.res1", w1, w1, td))
    shapes.update(_attn_shapes("up1.attn", w1, dc))
    shapes["upconv.w"] = (w0, w1, 3, 3)
    shapes["upconv.b"] = (w0,)
    shapes.update(_res_shapes("up0.res0", 2 * w0, w0, td))
    shapes.update(_res_shapes("up0.res1", w0, w0, td))
    shapes.update(_attn_shapes("up0.attn", w0, dc))
    shapes["out.w"] = (cfg.channels, w0, 3, 3)
    shapes["out.b"] = (cfg.channels,)
    return shapes


def init_denoiser(store: ParamStore, cfg: ArchConfig, rng: np.random.Generator) -> None:
    """Fan-in scaled normal init; the output conv starts at exactly zero."""
    for name, shape in denoiser_param_shapes(cfg).items():
        if name.startswith("out."):
            store.add(name, np.zeros(shape))
        elif name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            store.add(name, np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) == 2 else int(np.prod(shape[1:]))
            store.add(name, rng.standard_normal(shape) / math.sqrt(max(1, fan_in)))


def _bias(params, name: str) -> Tensor:
    return reshape(params[name], (params[name].shape[0], 1, 1))


def _res_block(params, p: str, x: Tensor, temb: Tensor, groups: int) -> Tensor:
    h = conv2d(silu(group_norm(x, groups)), params[f"{p}.conv1.w"])
    h = add(h, _bias(params, f"{p}.conv1.b"))
    shift = add(matmul(temb, params[f"{p}.temb.w"]), params[f"{p}.temb.b"])
    h = add(h, reshape(shift, (shift.shape[0], shift.shape[1], 1, 1)))
    h = conv2d(silu(group_norm(h, groups)), params[f"{p}.conv2.w"])
    h = add(h, _bias(params, f"{p}.conv2.b"))
    if f"{p}.skip.w" in params:
        b, c, hh, ww = x.shape
        flat = transpose(reshape(x, (b, c, hh * ww)), (0, 2, 1))
        skip = matmul(flat, params[f"{p}.skip.w"])
        x = reshape(transpose(skip, (0, 2, 1)), (b, skip.shape[-1], hh, ww))
    return add(x, h)


def _attn_block(params, p: str, x: Tensor, context: ContextEmbedding) -> Tensor:
    b, c, h, w = x.shape
    flat = transpose(reshape(x, (b, c, h * w)), (0, 2, 1))
    out = cross_attention(params, p, flat, context)
    return reshape(transpose(out, (0, 2, 1)), (b, c, h, w))


def unet_forward(params, cfg: ArchConfig, x: Tensor, t_arr: np.ndarray, context: ContextEmbedding) -> Tensor:
    """Shape-preserving noise prediction over (B, C_in, H, W) grids."""
    if not np.isfinite(x.data).all():
        raise DenoiserError("non-finite values in denoiser input")
    b, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ShapeError(f"expected {cfg.in_channels} input channels, got {c}")
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError("grid height and width must be even")
    g = cfg.groups
    temb = timestep_embedding(params, cfg, t_arr)
    h0 = conv2d(x, params["conv_in.w"])
    h0 = add(h0, _bias(params, "conv_in.b"))
    h0 = _res_block(params, "down0.res0", h0, temb, g)
    h0 = _res_block(params, "down0.res1", h0, temb, g)
    h0 = _attn_block(params, "down0.attn", h0, context)
    h1 = conv2d(h0, params["pool.w"], stride=2)
    h1 = add(h1, _bias(params, "pool.b"))
    h1 = _res_block(params, "down1.res0", h1, temb, g)
    h1 = _res_block(params, "down1.res1", h1, temb, g)
    h1 = _attn_block(params, "down1.attn", h1, context)
    m = _res_block(params, "mid.res0", h1, temb, g)
    m = _attn_block(params, "mid.attn", m, context)
    m = _res_block(params, "mid.res1", m, temb, g)
    u1 = concat([m, h1], axis=1)
    u1 = _res_block(params, "up1.res0", u1, temb, g)
    u1 = _res_block(params, "up1.res1", u1, temb, g)
    u1 = _attn_block(params, "up1.attn", u1, context)
    up = conv2d(upsample2x(u1), params["upconv.w"])
    up = add(up, _bias(params, "upconv.b"))
    u0 = concat([up, h0], axis=1)
    u0 = _res_block(params, "up0.res0", u0, temb, g)
    u0 = _res_block(params, "up0.res1", u0, temb, g)
    u0 = _attn_block(params, "up0.attn", u0, context)
    out = conv2d(silu(group_norm(u0, g)), params["out.w"])
    return add(out, _bias(params, "out.b"))


# -- full noise predictor ------------------------------------------------------


def grid_to_nodes(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major to match grid packing."""
    b, c, h, w = x.shape
    return transpose(reshape(x, (b, c, h * w)), (0, 2, 1))


def nodes_to_grid(nodes: Tensor, h: int, w: int) -> Tensor:
    b, n, c = nodes.shape
    return reshape(transpose(nodes, (0, 2, 1)), (b, c, h, w))


def predict_noise(
    params,
    cfg: ArchConfig,
    x_t: Tensor,
    t_arr: np.ndarray,
    context: ContextEmbedding,
    a_hat: Tensor,
) -> Tensor:
    """epsilon_theta(f(x_t, A), t, context) over (B, channels, H, W) grids."""
    if not isinstance(x_t, Tensor):
        x_t = Tensor(x_t)
    b, c, h, w = x_t.shape
    if c != cfg.channels:
        raise ShapeError(f"expected {cfg.channels} grid channels, got {c}")
    feats = nodes_to_grid(gcn_forward(grid_to_nodes(x_t), a_hat, params, cfg.gcn_layers), h, w)
    u_in = feats if cfg.gcn_mode == "replace" else concat([x_t, feats], axis=1)
    return unet_forward(params, cfg, u_in, t_arr, context)
