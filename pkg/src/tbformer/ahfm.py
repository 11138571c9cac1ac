"""Attention-aware hierarchical fusion of RGB and noise features.

For every tap the two domains are concatenated on channels, merged by a
3x3 conv, passed through DANet-style position attention with a learnable
gate ``alpha`` (initialized to zero), and re-convolved. The three fused tap
maps are then summed and convolved once more.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import nn
from . import numerics as nx
from .config import ModelConfig
from .extractor import TapFeatures, tokens_to_map
from .numerics import ShapeError, Tensor

TAP_NAMES = ("early", "mid", "late")


def init_tap(rng: np.random.Generator, dim: int) -> dict[str, np.ndarray]:
    parts = {
        "merge": nn.init_conv(rng, 2 * dim, dim, 3),
        "query": nn.init_conv(rng, dim, dim // 8, 1),
        "key": nn.init_conv(rng, dim, dim // 8, 1),
        "value": nn.init_conv(rng, dim, dim, 1),
        "fuse": nn.init_conv(rng, dim, dim, 3),
    }
    params = nn.flatten(parts)
    params["alpha"] = np.zeros(1)
    return params


def init_ahfm(rng: np.random.Generator, cfg: ModelConfig) -> dict[str, np.ndarray]:
    params = {}
    for tap in TAP_NAMES:
        params.update(nn.prefixed(init_tap(rng, cfg.dim), tap))
    params.update(nn.prefixed(nn.init_conv(rng, cfg.dim, cfg.dim, 3), "final"))
    return params


def position_attention_fuse(
    t_rgb: Tensor,
    t_noise: Tensor,
    p: Mapping[str, Tensor],
    grid: tuple[int, int],
    return_attention: bool = False,
):
    """Fuse one tap's RGB and noise tokens (each N x L) into an ``L x h x w`` map."""
    if t_rgb.shape != t_noise.shape:
        raise ShapeError(f"position_attention_fuse: {t_rgb.shape} vs {t_noise.shape}")
    p = nn.scoped(p)
    dim = t_rgb.shape[1]
    h, w = grid
    n = h * w
    stacked = nx.concat([tokens_to_map(t_rgb, grid), tokens_to_map(t_noise, grid)], axis=0)
    merged = nn.conv2d(stacked, p.sub("merge"))
    q = nx.reshape(nn.conv2d(merged, p.sub("query")), (dim // 8, n))
    k = nx.reshape(nn.conv2d(merged, p.sub("key")), (dim // 8, n))
    v = nx.reshape(nn.conv2d(merged, p.sub("value")), (dim, n))
    attn = nn.softmax(nx.matmul(nx.transpose(q), k), axis=-1)
    attended = nx.reshape(nx.matmul(v, attn), (dim, h, w))
    out = nn.conv2d(attended * p["alpha"] + merged, p.sub("fuse"))
    return (out, attn) if return_attention else out


def hierarchical_fuse(z_early: Tensor, z_mid: Tensor, z_late: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    if not z_early.shape == z_mid.shape == z_late.shape:
        raise ShapeError(
            f"hierarchical_fuse: shapes {z_early.shape}, {z_mid.shape}, {z_late.shape} differ"
        )
    return nn.conv2d(z_late + z_mid + z_early, nn.scoped(p).sub("final"))


def ahfm_forward(rgb: TapFeatures, noise: TapFeatures, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Fused feature map ``Z`` of shape ``L x h x w``."""
    p = nn.scoped(p)
    fused = [
        position_attention_fuse(tr, tn, p.sub(name), cfg.grid)
        for name, tr, tn in zip(TAP_NAMES, rgb, noise)
    ]
    return hierarchical_fuse(*fused, p)
