"""Bidirectional Transformer encoder (post-layer-norm, BERT ordering)."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ShapeError
from .tensor import Tensor

LN_EPS = 1e-12
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 4
    hidden_size: int = 128
    num_heads: int = 4
    intermediate_size: int = 512
    max_len: int = 50
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for name in ("vocab_size", "num_layers", "hidden_size", "num_heads", "intermediate_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EncoderConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EncoderOutput:
    hidden_states: Tensor
    attention: list[np.ndarray] | None = None

    @property
    def h1(self) -> Tensor:
        return self.hidden_states[..., 0, :]


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) samples redrawn until they lie within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    h, inter = config.hidden_size, config.intermediate_size
    arrays: dict[str, np.ndarray] = {
        "embeddings.word": truncated_normal(rng, (config.vocab_size, h), dtype=dtype),
        "embeddings.position": truncated_normal(rng, (config.max_len, h), dtype=dtype),
        "embeddings.segment": truncated_normal(rng, (1, h), dtype=dtype),
        "embeddings.ln.gain": np.ones(h, dtype),
        "embeddings.ln.bias": np.zeros(h, dtype),
    }
    for i in range(config.num_layers):
        p = f"layer.{i}."
        for proj in ("query", "key", "value", "output"):
            arrays[p + f"attn.{proj}.weight"] = truncated_normal(rng, (h, h), dtype=dtype)
            arrays[p + f"attn.{proj}.bias"] = np.zeros(h, dtype)
        arrays[p + "attn.ln.gain"] = np.ones(h, dtype)
        arrays[p + "attn.ln.bias"] = np.zeros(h, dtype)
        arrays[p + "ffn.in.weight"] = truncated_normal(rng, (inter, h), dtype=dtype)
        arrays[p + "ffn.in.bias"] = np.zeros(inter, dtype)
        arrays[p + "ffn.out.weight"] = truncated_normal(rng, (h, inter), dtype=dtype)
        arrays[p + "ffn.out.bias"] = np.zeros(h, dtype)
        arrays[p + "ffn.ln.gain"] = np.ones(h, dtype)
        arrays[p + "ffn.ln.bias"] = np.zeros(h, dtype)
    return {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    return tc.add(tc.matmul(x, tc.transpose(weight)), bias)


def embed(token_ids, config: EncoderConfig, params: dict[str, Tensor],
          training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Sum of token, absolute-position and segment-0 embeddings, normalised."""
    ids = np.asarray(token_ids)
    t = ids.shape[-1]
    if t > config.max_len:
        raise ShapeError(f"sequence length {t} exceeds max_len {config.max_len}")
    words = tc.embedding_lookup(params["embeddings.word"], ids)
    positions = tc.getitem(params["embeddings.position"], slice(0, t))
    x = words + positions + params["embeddings.segment"]
    x = tc.layer_norm(x, params["embeddings.ln.gain"], params["embeddings.ln.bias"], LN_EPS)
    return tc.dropout(x, config.dropout_p, training, rng)


def attention_bias(padding_mask, dtype) -> np.ndarray | None:
    """Additive key mask: 0 for real tokens, -inf for padding."""
    if padding_mask is None:
        return None
    m = np.asarray(padding_mask, dtype=bool)
    bias = np.where(m, 0.0, -np.inf).astype(dtype)
    # (..., T) -> (..., 1, 1, T) to broadcast over heads and query positions
    return bias[..., None, None, :]


def multi_head_self_attention(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    num_heads: int,
    padding_mask=None,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product self-attention sublayer with residual and layer norm.

    ``x`` is (T, H) or (B, T, H); ``padding_mask`` marks real positions with
    True. Returns the sublayer output, plus the (…, heads, T, T) attention
    weights when ``return_weights`` is set.
    """
    *lead, t, h = x.shape
    if h % num_heads:
        raise ShapeError(f"hidden size {h} not divisible by {num_heads} heads")
    if padding_mask is not None and np.shape(padding_mask) != tuple(lead) + (t,):
        raise ShapeError(f"padding mask {np.shape(padding_mask)} does not match input {x.shape}")
    d = h // num_heads

    def split_heads(z: Tensor) -> Tensor:
        z = tc.reshape(z, tuple(lead) + (t, num_heads, d))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return tc.transpose(z, axes)

    q = split_heads(linear(x, params[prefix + "query.weight"], params[prefix + "query.bias"]))
    k = split_heads(linear(x, params[prefix + "key.weight"], params[prefix + "key.bias"]))
    v = split_heads(linear(x, params[prefix + "value.weight"], params[prefix + "value.bias"]))

    k_t = tc.transpose(k, tuple(range(len(lead) + 1)) + (len(lead) + 2, len(lead) + 1))
    scores = tc.mul(tc.matmul(q, k_t), 1.0 / math.sqrt(d))
    bias = attention_bias(padding_mask, x.dtype)
    if bias is not None:
        scores = tc.add(scores, bias)
    weights = tc.softmax(scores, axis=-1)
    probs = tc.dropout(weights, dropout_p, training, rng)
    ctx = tc.matmul(probs, v)
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    ctx = tc.reshape(tc.transpose(ctx, axes), tuple(lead) + (t, h))

    out = linear(ctx, params[prefix + "output.weight"], params[prefix + "output.bias"])
    out = tc.dropout(out, dropout_p, training, rng)
    out = tc.layer_norm(out + x, params[prefix + "ln.gain"], params[prefix + "ln.bias"], LN_EPS)
    if return_weights:
        return out, weights.data
    return out


def feed_forward(x: Tensor, params: dict[str, Tensor], prefix: str, dropout_p: float,
                 training: bool, rng) -> Tensor:
    inner = tc.gelu(linear(x, params[prefix + "in.weight"], params[prefix + "in.bias"]))
    out = linear(inner, params[prefix + "out.weight"], params[prefix + "out.bias"])
    out = tc.dropout(out, dropout_p, training, rng)
    return tc.layer_norm(out + x, params[prefix + "ln.gain"], params[prefix + "ln.bias"], LN_EPS)


def encode(
    token_ids,
    config: EncoderConfig,
    params: dict[str, Tensor],
    padding_mask=None,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
) -> EncoderOutput:
    """Run the full encoder on (T,) or (B, T) ids.

    No causal mask is applied; every position attends to every unpadded
    position.
    """
    x = embed(token_ids, config, params, training, rng)
    attention = [] if return_attention else None
    for i in range(config.num_layers):
        res = multi_head_self_attention(
            x, params, f"layer.{i}.attn.", config.num_heads, padding_mask,
            config.dropout_p, training, rng, return_weights=return_attention,
        )
        if return_attention:
            x, w = res
            attention.append(w)
        else:
            x = res
        x = feed_forward(x, params, f"layer.{i}.ffn.", config.dropout_p, training, rng)
    return EncoderOutput(x, attention)
