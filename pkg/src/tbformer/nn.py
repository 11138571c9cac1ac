"""Neural building blocks on top of :mod:`tbformer.numerics`.

Parameters travel as flat ``name -> Tensor`` mappings; :class:`Scope` gives
prefix-relative access so block functions can be written against short
local names (``"attn.q.weight"``) while the model owns globally unique ones.
"""

from __future__ import annotations

import math
from typing import Iterator, Mapping

import numpy as np

from . import numerics as nx
from .config import ConfigError
from .numerics import DTYPE, ShapeError, Tensor, custom_op


class Scope(Mapping):
    """Read-only prefixed view over a flat parameter mapping."""

    def __init__(self, base: Mapping[str, Tensor], prefix: str = ""):
        self._base = base
        self._prefix = prefix

    def __getitem__(self, key: str) -> Tensor:
        try:
            return self._base[self._prefix + key]
        except KeyError:
            raise KeyError(f"missing parameter {self._prefix + key!r}") from None

    def __iter__(self) -> Iterator[str]:
        n = len(self._prefix)
        return (k[n:] for k in self._base if k.startswith(self._prefix))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def sub(self, name: str) -> "Scope":
        return Scope(self._base, f"{self._prefix}{name}.")


def scoped(params, prefix: str = "") -> Scope:
    if isinstance(params, Scope):
        return params.sub(prefix.rstrip(".")) if prefix else params
    return Scope(params, prefix)


# ---------------------------------------------------------------------------
# fused primitives
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    axis = axis % x.ndim
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return custom_op(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm: epsilon must be positive")
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, gg, gb

    return custom_op(out, (x, gamma, beta), bw, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    axis = axis % x.ndim
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    guarded = norm > eps
    denom = np.where(guarded, norm, eps)
    y = x.data / denom

    def bw(g):
        proj = np.where(guarded, (g * y).sum(axis=axis, keepdims=True), 0.0)
        return ((g - y * proj) / denom,)

    return custom_op(y, (x,), bw, "l2_normalize")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``in x out``."""
    out = nx.matmul(x, weight)
    if bias is not None:
        out = out + nx.expand(bias, out.shape)
    return out


def conv2d(x: Tensor, p: Mapping[str, Tensor], stride: int = 1) -> Tensor:
    """Conv layer from a scope holding ``weight`` (and optionally ``bias``); same-padding."""
    w = p["weight"]
    k = w.shape[-1]
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size {k} must be odd")
    bias = p["bias"] if "bias" in p else None
    return nx.conv2d(x, w, bias, stride=stride, pad=(k - 1) // 2)


def upsample_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    if h_out < x.shape[1] or w_out < x.shape[2]:
        raise ShapeError(f"upsample_bilinear: target {h_out}x{w_out} smaller than {x.shape[1:]}")
    return nx.resize_bilinear(x, h_out, w_out)


# ---------------------------------------------------------------------------
# Transformer blocks
# ---------------------------------------------------------------------------


def msa(x: Tensor, p: Mapping[str, Tensor], heads: int, return_attention: bool = False):
    """Multi-head self-attention over the rows of ``x`` (N x L).

    Scores are scaled per head by ``1/sqrt(L/heads)``.
    """
    n, dim = x.shape
    if dim % heads:
        raise ConfigError(f"msa: embed dim {dim} not divisible by {heads} heads")
    dh = dim // heads

    def split(t: Tensor) -> Tensor:
        return nx.transpose(nx.reshape(t, (n, heads, dh)), (1, 0, 2))

    q = split(linear(x, p["q.weight"], p["q.bias"]))
    k = split(linear(x, p["k.weight"], p["k.bias"]))
    v = split(linear(x, p["v.weight"], p["v.bias"]))
    scores = nx.matmul(q, nx.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = nx.reshape(nx.transpose(nx.matmul(attn, v), (1, 0, 2)), (n, dim))
    out = linear(ctx, p["o.weight"], p["o.bias"])
    return (out, attn) if return_attention else out


def mlp(x: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    h = nx.gelu(linear(x, p["fc1.weight"], p["fc1.bias"]))
    return linear(h, p["fc2.weight"], p["fc2.bias"])


def transformer_layer(x: Tensor, p: Mapping[str, Tensor], heads: int, ln_eps: float = 1e-6) -> Tensor:
    """Pre-norm layer: ``M = MSA(LN(x)) + x``; ``out = MLP(LN(M)) + M``."""
    p = scoped(p)
    m = msa(layer_norm(x, p["ln1.gamma"], p["ln1.beta"], ln_eps), p.sub("attn"), heads) + x
    return mlp(layer_norm(m, p["ln2.gamma"], p["ln2.beta"], ln_eps), p.sub("mlp")) + m


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_truncated_normal(shape, std: float, seed) -> np.ndarray:
    """Samples from N(0, std^2) truncated to [-2 std, 2 std] by redrawing.

    ``seed`` is an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if std <= 0:
        raise ValueError("init_truncated_normal: std must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(DTYPE)


def init_linear(rng, d_in: int, d_out: int, std: float = 0.02) -> dict[str, np.ndarray]:
    return {
        "weight": init_truncated_normal((d_in, d_out), std, rng),
        "bias": np.zeros(d_out, dtype=DTYPE),
    }


def init_conv(rng, c_in: int, c_out: int, k: int, bias: bool = True) -> dict[str, np.ndarray]:
    # variance-preserving scale; no nonlinearity follows these convs
    std = 1.0 / math.sqrt(c_in * k * k)
    out = {"weight": init_truncated_normal((c_out, c_in, k, k), std, rng)}
    if bias:
        out["bias"] = np.zeros(c_out, dtype=DTYPE)
    return out


def init_layer_norm(dim: int) -> dict[str, np.ndarray]:
    return {"gamma": np.ones(dim, dtype=DTYPE), "beta": np.zeros(dim, dtype=DTYPE)}


def init_transformer_layer(rng, dim: int, heads: int, mlp_ratio: int = 4) -> dict[str, np.ndarray]:
    if dim % heads:
        raise ConfigError(f"embed dim {dim} not divisible by {heads} heads")
    parts: dict[str, dict[str, np.ndarray]] = {
        "ln1": init_layer_norm(dim),
        "attn.q": init_linear(rng, dim, dim),
        "attn.k": init_linear(rng, dim, dim),
        "attn.v": init_linear(rng, dim, dim),
        "attn.o": init_linear(rng, dim, dim),
        "ln2": init_layer_norm(dim),
        "mlp.fc1": init_linear(rng, dim, mlp_ratio * dim),
        "mlp.fc2": init_linear(rng, mlp_ratio * dim, dim),
    }
    return flatten(parts)


def flatten(tree: Mapping[str, Mapping[str, np.ndarray]], prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for key, sub in tree.items():
        for name, value in sub.items():
            out[f"{prefix}{key}.{name}"] = value
    return out


def prefixed(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in params.items()}
