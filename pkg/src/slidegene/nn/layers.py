"""Neural layers built on the autodiff tensor core."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, ContractError, ShapeError
from .tensor import Param, Tensor, _emit, add, matmul, reshape, softmax, transpose

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form x * Phi(x)."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (phi + x.data * pdf),)

    return _emit(x.data * phi, (x,), bwd)


def layernorm(x: Tensor, gain: Param, bias: Param, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization per row (last axis), then affine.

    Statistics use the biased variance over the feature dimension.
    """
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be positive, got {eps}")
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ShapeError("layernorm requires a non-empty feature dimension")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv

    def bwd(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))
        axes = tuple(range(x.ndim - 1))
        return gx, (g * y).sum(axis=axes), g.sum(axis=axes)

    return _emit(y * gain.data + bias.data, (x, gain.value, bias.value), bwd)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) at training, identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an RNG")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def bwd(g):
        return (g * keep,)

    return _emit(x.data * keep, (x,), bwd)


def linear(x: Tensor, weight: Param, bias: Param | None = None) -> Tensor:
    out = matmul(x, weight.value)
    if bias is not None:
        out = add(out, bias.value)
    return out


def multi_head_self_attention(z: Tensor, weights: dict[str, Param], heads: int) -> Tensor:
    """Softmax attention over the token axis, one scaled dot-product per head.

    `z` is (..., tokens, width); q/k/v/out projections all map width -> width.
    """
    width = z.shape[-1]
    if width % heads != 0:
        raise ConfigError(f"width {width} not divisible by {heads} heads")
    head_dim = width // heads
    tokens = z.shape[-2]
    lead = z.shape[:-2]

    q = linear(z, weights["wq"], weights["bq"])
    k = linear(z, weights["wk"], weights["bk"])
    v = linear(z, weights["wv"], weights["bv"])

    def split_heads(t: Tensor) -> Tensor:
        t = reshape(t, lead + (tokens, heads, head_dim))
        order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return transpose(t, order)  # (..., heads, tokens, head_dim)

    q, k, v = split_heads(q), split_heads(k), split_heads(v)
    kt_axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = matmul(q, transpose(k, kt_axes)) * (1.0 / math.sqrt(head_dim))
    attn = softmax(scores)
    ctx = matmul(attn, v)  # (..., heads, tokens, head_dim)
    order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    ctx = transpose(ctx, order)
    ctx = reshape(ctx, lead + (tokens, width))
    return linear(ctx, weights["wo"], weights["bo"])


def mlp_block(
    z: Tensor,
    weights: dict[str, Param],
    drop_p: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Linear -> GELU -> linear -> dropout, the encoder's feed-forward half."""
    h = gelu(linear(z, weights["w1"], weights["b1"]))
    h = linear(h, weights["w2"], weights["b2"])
    return dropout(h, drop_p, training, rng)


def trunc_normal(rng: np.random.Generator, shape, std: float, dtype=np.float32) -> np.ndarray:
    """N(0, std^2) draws, resampled until all fall within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)
