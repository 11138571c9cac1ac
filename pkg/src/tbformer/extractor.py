"""One feature-extraction branch: patchify, embed, add positions, run the layers.

The RGB and noise branches are two independent instances of this module;
they never share parameter storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import nn
from . import numerics as nx
from .config import ModelConfig
from .numerics import ShapeError, Tensor


@dataclass
class TapFeatures:
    """Outputs of the layers at one, two and three thirds of the depth (each N x L)."""

    early: Tensor
    mid: Tensor
    late: Tensor

    def __iter__(self):
        return iter((self.early, self.mid, self.late))


def init_branch(rng: np.random.Generator, cfg: ModelConfig) -> dict[str, np.ndarray]:
    p = cfg.patch
    params = nn.prefixed(nn.init_linear(rng, p * p * 3, cfg.dim), "patch")
    params["pos"] = nn.init_truncated_normal((cfg.num_patches, cfg.dim), 0.02, rng)
    for i in range(cfg.depth):
        params.update(
            nn.prefixed(nn.init_transformer_layer(rng, cfg.dim, cfg.heads, cfg.mlp_ratio), f"layers.{i}")
        )
    return params


def patchify(image: Tensor, patch: int) -> Tensor:
    """``3 x H x W`` -> ``N x (p*p*3)``; patches row-major over the grid, pixels
    flattened in (row, col, channel) order within a patch."""
    c, h, w = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"patchify: image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = nx.reshape(image, (c, gh, patch, gw, patch))
    x = nx.transpose(x, (1, 3, 2, 4, 0))
    return nx.reshape(x, (gh * gw, patch * patch * c))


def patch_embed(image: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    if image.shape != (3, cfg.H, cfg.W):
        raise ShapeError(f"patch_embed: expected image of shape (3, {cfg.H}, {cfg.W}), got {image.shape}")
    p = nn.scoped(p)
    tokens = nn.linear(patchify(image, cfg.patch), p["patch.weight"], p["patch.bias"])
    pos = p["pos"]
    if pos.shape != tokens.shape:
        raise ShapeError(f"patch_embed: position embeddings {pos.shape} vs tokens {tokens.shape}")
    return tokens + pos


def branch_forward(tokens: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> TapFeatures:
    p = nn.scoped(p)
    taps = set(cfg.taps)
    outs = []
    x = tokens
    for i in range(cfg.depth):
        x = nn.transformer_layer(x, p.sub(f"layers.{i}"), cfg.heads, cfg.ln_eps)
        if i + 1 in taps:
            outs.append(x)
    return TapFeatures(*outs)


def extract(image: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> TapFeatures:
    return branch_forward(patch_embed(image, p, cfg), p, cfg)


def tokens_to_map(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """``N x L`` -> ``L x h x w`` (transpose then reshape)."""
    n, dim = tokens.shape
    h, w = grid
    if n != h * w:
        raise ShapeError(f"tokens_to_map: {n} tokens do not fill a {h}x{w} grid")
    return nx.reshape(nx.transpose(tokens), (dim, h, w))


def map_to_tokens(fmap: Tensor) -> Tensor:
    """``L x h x w`` -> ``N x L``."""
    dim, h, w = fmap.shape
    return nx.transpose(nx.reshape(fmap, (dim, h * w)))
