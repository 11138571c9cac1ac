"""Mask Transformer decoder with two learnable category embeddings.

Row 0 of the category embeddings stands for the authentic class, row 1 for
the forged class. Class logits are cosine similarities between projected
patch features and projected category features, so they lie in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import nn
from . import numerics as nx
from .config import ModelConfig
from .extractor import map_to_tokens
from .numerics import ShapeError, Tensor

NUM_CLASSES = 2
DECODER_DEPTH = 2


@dataclass
class DecoderOutput:
    mask: Tensor  # 2 x H x W class probabilities
    logits: Tensor  # 2 x h x w cosine scores before upsampling
    patch_unit: Tensor  # N x L, unit rows
    class_unit: Tensor  # 2 x L, unit rows


def init_decoder(rng: np.random.Generator, cfg: ModelConfig) -> dict[str, np.ndarray]:
    # fan-in scaled so decoder tokens are O(1) at any width (std 0.02 assumes width 768)
    params = nn.prefixed(nn.init_linear(rng, cfg.dim, cfg.dim, cfg.dim**-0.5), "in_proj")
    # roughly unit-norm category rows; at std 0.02 they reach the L2 normalization
    # with norms near 0.07, where the normalization is sharply curved
    params["cls_emb"] = nn.init_truncated_normal((NUM_CLASSES, cfg.dim), cfg.dim**-0.5, rng)
    for i in range(DECODER_DEPTH):
        params.update(
            nn.prefixed(nn.init_transformer_layer(rng, cfg.dim, cfg.heads, cfg.mlp_ratio), f"layers.{i}")
        )
    # unit-scale head projections keep the L2 normalization away from tiny norms
    head_std = cfg.dim**-0.5
    params.update(nn.prefixed(nn.init_linear(rng, cfg.dim, cfg.dim, head_std), "patch_proj"))
    params.update(nn.prefixed(nn.init_linear(rng, cfg.dim, cfg.dim, head_std), "class_proj"))
    return params


def decode_full(z: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> DecoderOutput:
    p = nn.scoped(p)
    h, w = cfg.grid
    if z.shape != (cfg.dim, h, w):
        raise ShapeError(f"decode: expected fused map of shape {(cfg.dim, h, w)}, got {z.shape}")
    n = h * w
    tokens = nn.linear(map_to_tokens(z), p["in_proj.weight"], p["in_proj.bias"])
    x = nx.concat([tokens, p["cls_emb"]], axis=0)
    for i in range(DECODER_DEPTH):
        x = nn.transformer_layer(x, p.sub(f"layers.{i}"), cfg.heads, cfg.ln_eps)
    patches, classes = x[:n], x[n:]
    patch_unit = nn.l2_normalize(nn.linear(patches, p["patch_proj.weight"], p["patch_proj.bias"]))
    class_unit = nn.l2_normalize(nn.linear(classes, p["class_proj.weight"], p["class_proj.bias"]))
    scores = nx.matmul(patch_unit, nx.transpose(class_unit))  # N x 2
    logits = nx.reshape(nx.transpose(scores), (NUM_CLASSES, h, w))
    mask = nn.softmax(nn.upsample_bilinear(logits, cfg.H, cfg.W), axis=0)
    return DecoderOutput(mask, logits, patch_unit, class_unit)


def decode(z: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Fused map ``L x h x w`` -> per-pixel class probabilities ``2 x H x W``."""
    return decode_full(z, p, cfg).mask
