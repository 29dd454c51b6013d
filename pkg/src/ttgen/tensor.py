"""Dense-tensor numerics with reverse-mode automatic differentiation.

Values are stored as numpy float64 arrays (float32 is an opt-in speed mode);
every operation records a backward rule when executed with gradients enabled,
so the graph of live Tensors is the autodiff tape.  A seeded counter-based
generator (Philox) backs all initialisation and noise so runs are bit-identical
across platforms and across resume points.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

# per-thread so concurrent service requests cannot clobber each other's state
_grad_state = threading.local()


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class Tensor:
    """A dense array plus an optional autodiff record.

    `_parents` and `_backward` are set only when the tensor was produced by an
    op under an active tape; leaves created with requires_grad=True accumulate
    into `.grad` when `backward()` reaches them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- convenience arithmetic ------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class ShapeError(ValueError):
    pass


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _make(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), backward)


# -- shape manipulation --------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(data, tuple(tensors), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis {axis} of {a.shape}")
    pieces = []
    start = 0
    for size in sizes:
        pieces.append(narrow(a, axis, start, start + size))
        start += size
    return pieces


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx].copy(), (a,), backward)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsample over the trailing two axes."""
    data = np.repeat(np.repeat(a.data, 2, axis=-2), 2, axis=-1)

    def backward(g):
        s = g.shape
        g4 = g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
        return (g4.sum(axis=(-3, -1)),)

    return _make(data, (a,), backward)


# -- reductions ----------------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    n = a.size
    return _make(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),)
    )


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        gd = (2.0 / n) * diff * g
        return (gd, -gd)

    return _make(np.asarray((diff * diff).mean()), (a, b), backward)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as in numpy matmul."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul requires >= 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _make(data, (a, b), backward)


def _im2col(xp: np.ndarray, stride: int, h_out: int, w_out: int) -> np.ndarray:
    # xp: (B, C, Hp, Wp) padded input -> (B, h_out*w_out, C*9)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, h_out, w_out, 3, 3)
    b, c = xp.shape[0], xp.shape[1]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h_out * w_out, c * 9)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution with zero padding 1; accepts (C,H,W) or (B,C,H,W)."""
    if stride not in (1, 2):
        raise ShapeError(f"conv2d stride must be 1 or 2, got {stride}")
    if w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects (c_out, c_in, 3, 3) weights, got {w.shape}")
    squeeze = x.data.ndim == 3
    xb = x.data[None] if squeeze else x.data
    if xb.ndim != 4 or xb.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} incompatible with weights {w.shape}")
    bsz, c_in, h, wid = xb.shape
    c_out = w.shape[0]
    h_out = (h + 2 - 3) // stride + 1
    w_out = (wid + 2 - 3) // stride + 1
    xp = np.pad(xb, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, stride, h_out, w_out)  # (B, HW, C*9)
    wmat = w.data.reshape(c_out, c_in * 9)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1).reshape(bsz, c_out, h_out, w_out)

    def backward(g):
        gb = g[None] if squeeze else g
        gcols = gb.reshape(bsz, c_out, h_out * w_out).transpose(0, 2, 1)  # (B, HW, c_out)
        gw = np.matmul(
            gcols.reshape(-1, c_out).T, cols.reshape(-1, c_in * 9)
        ).reshape(w.shape)
        gpatch = np.matmul(gcols, wmat).reshape(bsz, h_out, w_out, c_in, 3, 3)
        gxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gxp[:, :, di : di + stride * h_out : stride, dj : dj + stride * w_out : stride] += (
                    gpatch[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, 1:-1, 1:-1]
        return (gx[0] if squeeze else gx, gw)

    return _make(out[0] if squeeze else out, (x, w), backward)


# -- normalisation -------------------------------------------------------------


def group_norm(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalise each channel group to zero mean / unit variance.

    Accepts (C,H,W) or (B,C,H,W); no affine part (apply gain/bias separately).
    """
    squeeze = x.data.ndim == 3
    xb = x.data[None] if squeeze else x.data
    bsz, c = xb.shape[0], xb.shape[1]
    if c % groups != 0:
        raise ShapeError(f"channels {c} not divisible by groups {groups}")
    grouped = xb.reshape(bsz, groups, -1)
    mean = grouped.mean(axis=2, keepdims=True)
    var = grouped.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (grouped - mean) * inv

    def backward(g):
        gb = (g[None] if squeeze else g).reshape(bsz, groups, -1)
        gm = gb.mean(axis=2, keepdims=True)
        gym = (gb * y).mean(axis=2, keepdims=True)
        gx = inv * (gb - gm - y * gym)
        gx = gx.reshape(xb.shape)
        return (gx[0] if squeeze else gx,)

    out = y.reshape(xb.shape)
    return _make(out[0] if squeeze else out, (x,), backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis; no affine part."""
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mean) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _make(y, (x,), backward)


# -- embedding -----------------------------------------------------------------


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: ids of any shape -> ids.shape + (dim,)."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(data, (table,), backward)


# -- backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad of every reachable requires_grad leaf from a scalar loss."""
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# -- parameters and optimiser --------------------------------------------------


class ParamStore:
    """Named parameters with stable iteration order plus Adam moment state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def items(self):
        return self.params.items()

    def names(self):
        return list(self.params.keys())

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return float(np.sqrt(total))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            self.params[name].data[...] = arr


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected adaptive-moment update over every parameter."""
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- checkpoint serialisation --------------------------------------------------

CHECKPOINT_MAGIC = b"CTCK"
CHECKPOINT_VERSION = 1


def _write_record(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_record(f) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", f.read(4))
    name = f.read(nlen).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def save_checkpoint(
    path,
    store: ParamStore,
    sidecar: dict,
    ema: dict[str, np.ndarray] | None = None,
) -> None:
    """Write parameters (+ optimiser state, + optional EMA) and a JSON sidecar.

    The data file is written to a temp name and renamed so a failed write never
    clobbers the previous checkpoint.
    """
    records: list[tuple[str, np.ndarray]] = []
    for name, p in store.items():
        records.append((name, p.data))
    for name in store.params:
        records.append((f"adam.m.{name}", store._m[name]))
        records.append((f"adam.v.{name}", store._v[name]))
    if ema is not None:
        for name, arr in ema.items():
            records.append((f"ema.{name}", arr))

    path = str(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(f, name, arr)
    import os

    os.replace(tmp, path)
    side = dict(sidecar)
    side["adam_step"] = store.step_count
    with open(path + ".json", "w") as f:
        json.dump(side, f, indent=2, sort_keys=True)
        f.write("\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ParamStore, dict, dict[str, np.ndarray] | None]:
    path = str(path)
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (n,) = struct.unpack("<I", f.read(4))
        raw = dict(_read_record(f) for _ in range(n))
    store = ParamStore()
    ema: dict[str, np.ndarray] = {}
    for name, arr in raw.items():
        if name.startswith(("adam.m.", "adam.v.", "ema.")):
            continue
        store.add(name, arr)
        if f"adam.m.{name}" in raw:
            store._m[name] = raw[f"adam.m.{name}"].copy()
            store._v[name] = raw[f"adam.v.{name}"].copy()
    for name, arr in raw.items():
        if name.startswith("ema."):
            ema[name[4:]] = arr.copy()
    with open(path + ".json") as f:
        sidecar = json.load(f)
    store.step_count = int(sidecar.get("adam_step", 0))
    return store, sidecar, (ema or None)


def model_hash(path) -> str:
    h = hashlib.sha256()
    with open(str(path), "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- seeded randomness ---------------------------------------------------------


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & (2**64 - 1)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(*keys) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of ints/strings.

    The same keys always yield the same stream, independent of call order,
    platform, or how many other streams exist.
    """
    entropy = [_key_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def config_hash(obj) -> str:
    """Stable hash of a JSON-serialisable config object."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
