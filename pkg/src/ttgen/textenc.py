"""Closed-vocabulary tokenizer and a small jointly trained text encoder.

The conditioning pathway stays sequence-shaped: token plus position
embeddings run through two pre-norm self-attention blocks, PAD positions are
masked out of attention and zeroed in the output, and the resulting L x d
matrix feeds cross-attention in the denoiser.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    add,
    embed,
    layer_norm,
    matmul,
    mul,
    reshape,
    scale,
    silu,
    softmax,
    transpose,
)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

D_CTX_DEFAULT = 32
L_MAX_DEFAULT = 24
VOCAB_SIZE_DEFAULT = 96

_WORD_RE = re.compile(r"[a-z0-9]+")

ATTENTION_MASK_FILL = -1e9


class VocabError(ValueError):
    pass


class TokenizeError(ValueError):
    pass


class Vocabulary:
    """Contiguous token -> id table; unknown words map to UNK."""

    def __init__(self, tokens):
        tokens = tuple(tokens)
        if tokens[:4] != SPECIAL_TOKENS:
            raise VocabError(f"tokens must start with the four specials {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("duplicate tokens")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._index.get(word, UNK)

    def word_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @staticmethod
    def from_words(words) -> "Vocabulary":
        body = sorted(set(words) - set(SPECIAL_TOKENS))
        return Vocabulary(SPECIAL_TOKENS + tuple(body))

    def to_json_dict(self) -> dict:
        return {"tokens": list(self.tokens)}

    @staticmethod
    def from_json_dict(doc: dict) -> "Vocabulary":
        return Vocabulary(doc["tokens"])


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray  # (l_max,) int64
    mask: np.ndarray  # (l_max,) bool, True on non-PAD
    n_truncated: int = 0  # words dropped to respect l_max


def tokenize(prompt, vocab: Vocabulary, l_max: int = L_MAX_DEFAULT) -> TokenSequence:
    """Lowercase, split on whitespace and punctuation, add BOS/EOS, pad."""
    text = getattr(prompt, "text", prompt)
    if not isinstance(text, str) or not text.strip():
        raise TokenizeError("empty prompt")
    words = _WORD_RE.findall(text.lower())
    if not words:
        raise TokenizeError("prompt contains no words")
    n_truncated = max(0, len(words) - (l_max - 2))
    words = words[: l_max - 2]
    ids = [BOS] + [vocab.id_of(w) for w in words] + [EOS]
    n_real = len(ids)
    ids = ids + [PAD] * (l_max - n_real)
    mask = np.zeros(l_max, dtype=bool)
    mask[:n_real] = True
    return TokenSequence(ids=np.array(ids, dtype=np.int64), mask=mask, n_truncated=n_truncated)


# -- encoder -------------------------------------------------------------------


@dataclass(frozen=True)
class TextEncConfig:
    vocab_size: int
    d_ctx: int = D_CTX_DEFAULT
    l_max: int = L_MAX_DEFAULT
    n_blocks: int = 2
    n_heads: int = 2

    def __post_init__(self):
        if self.d_ctx % self.n_heads != 0:
            raise ValueError("d_ctx must divide evenly across heads")

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_ctx": self.d_ctx,
            "l_max": self.l_max,
            "n_blocks": self.n_blocks,
            "n_heads": self.n_heads,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "TextEncConfig":
        return TextEncConfig(**doc)


@dataclass(frozen=True)
class ContextEmbedding:
    values: Tensor  # (B, l_max, d_ctx); PAD rows zero
    mask: np.ndarray  # (B, l_max) float, 1.0 on real tokens


def init_text_encoder(store: ParamStore, cfg: TextEncConfig, rng: np.random.Generator) -> None:
    d = cfg.d_ctx
    store.add("textenc.embed", 0.02 * rng.standard_normal((cfg.vocab_size, d)))
    store.add("textenc.pos", 0.02 * rng.standard_normal((cfg.l_max, d)))
    for i in range(cfg.n_blocks):
        p = f"textenc.b{i}"
        for w in ("wq", "wk", "wv", "wo"):
            store.add(f"{p}.attn.{w}", rng.standard_normal((d, d)) / math.sqrt(d))
        hidden = 2 * d
        store.add(f"{p}.ff.w1", rng.standard_normal((d, hidden)) / math.sqrt(d))
        store.add(f"{p}.ff.b1", np.zeros(hidden))
        store.add(f"{p}.ff.w2", rng.standard_normal((hidden, d)) / math.sqrt(hidden))
        store.add(f"{p}.ff.b2", np.zeros(d))


def text_encoder_param_names(cfg: TextEncConfig) -> list[str]:
    names = ["textenc.embed", "textenc.pos"]
    for i in range(cfg.n_blocks):
        p = f"textenc.b{i}"
        names += [f"{p}.attn.{w}" for w in ("wq", "wk", "wv", "wo")]
        names += [f"{p}.ff.w1", f"{p}.ff.b1", f"{p}.ff.w2", f"{p}.ff.b2"]
    return names


def _attention(params, prefix: str, x: Tensor, neg_mask: Tensor, n_heads: int) -> Tensor:
    b, l, d = x.shape
    dh = d // n_heads

    def heads(t):
        return transpose(reshape(t, (b, l, n_heads, dh)), (0, 2, 1, 3))

    q = heads(matmul(x, params[f"{prefix}.wq"]))
    k = heads(matmul(x, params[f"{prefix}.wk"]))
    v = heads(matmul(x, params[f"{prefix}.wv"]))
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    att = softmax(add(scores, neg_mask), axis=-1)
    out = matmul(att, v)
    out = reshape(transpose(out, (0, 2, 1, 3)), (b, l, d))
    return matmul(out, params[f"{prefix}.wo"])


def _feed_forward(params, prefix: str, x: Tensor) -> Tensor:
    h = silu(add(matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def encode(params, cfg: TextEncConfig, ids: np.ndarray, mask: np.ndarray) -> ContextEmbedding:
    """Batched; a single (l_max,) sequence is lifted to batch size 1."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask)
    if ids.ndim == 1:
        ids = ids[None]
        mask = mask[None]
    if ids.shape[1] != cfg.l_max or mask.shape != ids.shape:
        raise ShapeError(f"expected ids (B, {cfg.l_max}) with matching mask, got {ids.shape}")
    maskf = mask.astype(np.float64)
    h = add(embed(params["textenc.embed"], ids), embed(params["textenc.pos"], np.arange(cfg.l_max)))
    neg = Tensor(((1.0 - maskf) * ATTENTION_MASK_FILL)[:, None, None, :])
    for i in range(cfg.n_blocks):
        h = add(h, _attention(params, f"textenc.b{i}.attn", layer_norm(h), neg, cfg.n_heads))
        h = add(h, _feed_forward(params, f"textenc.b{i}.ff", layer_norm(h)))
    h = mul(h, Tensor(maskf[:, :, None]))
    return ContextEmbedding(values=h, mask=maskf)
