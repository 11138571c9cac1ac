"""End-to-end forgery localization model and its loss.

Parameters are a flat ``name -> float32 array`` dict. Names are prefixed by
component: ``bayar.``, ``rgb.``, ``noise.``, ``ahfm.``, ``concat_proj.`` and
``decoder.``. Only the components a variant uses are initialized.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import nn
from . import numerics as nx
from .ahfm import ahfm_forward, init_ahfm
from .bayar import bayar_forward, bayar_reproject, init_bayar
from .config import ConfigError, ModelConfig
from .decoder import decode, init_decoder
from .extractor import extract, init_branch, tokens_to_map
from .numerics import ShapeError, Tensor

PROB_EPS = 1e-7
STORAGE_DTYPE = np.float32

COMPONENTS = {
    "rgb_only": ("rgb", "decoder"),
    "rgb_noise_concat": ("bayar", "rgb", "noise", "concat_proj", "decoder"),
    "full_ahfm": ("bayar", "rgb", "noise", "ahfm", "decoder"),
}
_COMPONENT_ORDER = ("bayar", "rgb", "noise", "ahfm", "concat_proj", "decoder")


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Initialize every component used by ``cfg.variant``.

    Each component draws from its own seed stream, so e.g. the RGB branch is
    identical across variants for the same seed.
    """
    streams = dict(
        zip(_COMPONENT_ORDER, (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)))
    )
    builders = {
        "bayar": lambda rng: {"kernels": init_bayar(rng, 3, cfg.bayar_kernel)},
        "rgb": lambda rng: init_branch(rng, cfg),
        "noise": lambda rng: init_branch(rng, cfg),
        "ahfm": lambda rng: init_ahfm(rng, cfg),
        "concat_proj": lambda rng: nn.init_linear(rng, 2 * cfg.dim, cfg.dim),
        "decoder": lambda rng: init_decoder(rng, cfg),
    }
    params: dict[str, np.ndarray] = {}
    for comp in _COMPONENT_ORDER:
        if comp in COMPONENTS[cfg.variant]:
            for name, value in builders[comp](streams[comp]).items():
                params[f"{comp}.{name}"] = np.asarray(value, dtype=STORAGE_DTYPE)
    if "bayar.kernels" in params:
        params["bayar.kernels"] = bayar_reproject(params["bayar.kernels"])
    return params


def active_names(params: Mapping[str, object], cfg: ModelConfig) -> list[str]:
    comps = COMPONENTS[cfg.variant]
    return [k for k in params if k.split(".", 1)[0] in comps]


def check_params(params: Mapping[str, object], cfg: ModelConfig) -> None:
    present = {k.split(".", 1)[0] for k in params}
    missing = [c for c in COMPONENTS[cfg.variant] if c not in present]
    if missing:
        raise ConfigError(f"variant {cfg.variant!r} needs parameters for {missing}, not present")


def forward(image, params: Mapping[str, Tensor], cfg: ModelConfig, strict: bool = True) -> Tensor:
    """Per-pixel class probabilities ``2 x H x W`` (row 1 = forged) for a ``3 x H x W`` image in [0, 1]."""
    check_params(params, cfg)
    img = image if isinstance(image, Tensor) else Tensor(image)
    if img.shape != (3, cfg.H, cfg.W):
        raise ShapeError(f"forward: expected image of shape (3, {cfg.H}, {cfg.W}), got {img.shape}")
    if img.data.min() < 0.0 or img.data.max() > 1.0:
        raise ValueError("forward: image values must lie in [0, 1]")
    p = nn.scoped(params)
    rgb = extract(img, p.sub("rgb"), cfg)
    if cfg.variant == "rgb_only":
        z = tokens_to_map(rgb.late, cfg.grid)
    else:
        noise_map = bayar_forward(img, p["bayar.kernels"], strict=strict)
        noise = extract(noise_map, p.sub("noise"), cfg)
        if cfg.variant == "rgb_noise_concat":
            both = nx.concat([rgb.late, noise.late], axis=1)
            z = tokens_to_map(nn.linear(both, p["concat_proj.weight"], p["concat_proj.bias"]), cfg.grid)
        else:
            z = ahfm_forward(rgb, noise, p.sub("ahfm"), cfg)
    return decode(z, p.sub("decoder"), cfg)


def _binary_gt(gt) -> np.ndarray:
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if not np.isin(g, (0.0, 1.0)).all():
        raise ValueError("ground-truth mask must be binary (0/1)")
    return g


def bce_loss(mask: Tensor, gt, forged_weight: float = 1.0) -> Tensor:
    """Mean pixel binary cross-entropy between the forged channel and ``gt``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    g = _binary_gt(gt)
    if mask.ndim != 3 or mask.shape[0] != 2 or mask.shape[1:] != g.shape:
        raise ShapeError(f"bce_loss: mask {mask.shape} vs ground truth {g.shape}")
    forged = nx.clamp(mask[1], PROB_EPS, 1.0 - PROB_EPS)
    authentic = nx.clamp(mask[0], PROB_EPS, 1.0 - PROB_EPS)
    gt_t = Tensor(g * forged_weight)
    rest = Tensor(1.0 - g)
    return -nx.mean(gt_t * nx.log(forged) + rest * nx.log(authentic))


def predict(image: np.ndarray, params: Mapping[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    """Forged-class probability map ``H x W`` without recording a tape."""
    leaves = nx.leaves_from(params, requires_grad=False)
    return forward(image, leaves, cfg).data[1].copy()
