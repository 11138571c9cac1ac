"""SGD with momentum under a polynomial learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, MutableMapping

import numpy as np

from .bayar import bayar_reproject
from .config import ConfigError

BAYAR_PARAM = "bayar.kernels"


@dataclass(frozen=True)
class ScheduleConfig:
    lr0: float = 0.001
    iter_total: int = 1000
    power: float = 0.9
    momentum: float = 0.9
    batch_size: int = 8
    weight_decay: float = 0.0
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.iter_total < 1:
            raise ConfigError(f"iter_total must be >= 1, got {self.iter_total}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive when set, got {self.clip_norm}")


def lr_at(iter_current: int, cfg: ScheduleConfig) -> float:
    """``lr0 * (1 - iter_current / iter_total) ** power``."""
    if not 0 <= iter_current <= cfg.iter_total:
        raise ValueError(f"iteration {iter_current} outside [0, {cfg.iter_total}]")
    return cfg.lr0 * (1.0 - iter_current / cfg.iter_total) ** cfg.power


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def sgd_step(
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum_state: MutableMapping[str, np.ndarray],
    names: Iterable[str] | None = None,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    clip_norm: float | None = None,
) -> None:
    """One in-place update ``v <- momentum*v + g``; ``p <- p - lr*v``.

    ``names`` selects the trainable parameters (default: all of ``params``).
    Arithmetic runs in float64 and results are stored back at each
    parameter's storage dtype. The Bayar kernels are reprojected afterward.
    """
    names = list(params) if names is None else list(names)
    missing = [n for n in names if n not in grads or grads[n] is None]
    if missing:
        raise KeyError(f"sgd_step: no gradient for parameter(s) {missing[:5]}")
    scale = 1.0
    if clip_norm is not None:
        norm = global_norm(grads[n] for n in names)
        if norm > clip_norm:
            scale = clip_norm / norm
    for n in names:
        p = params[n]
        g = np.asarray(grads[n], dtype=np.float64) * scale
        if g.shape != p.shape:
            raise ValueError(f"sgd_step: gradient for {n!r} has shape {g.shape}, parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        v = momentum * momentum_state.get(n, 0.0) + g
        momentum_state[n] = v.astype(p.dtype)
        params[n] = (p - lr * momentum_state[n].astype(np.float64)).astype(p.dtype)
    if BAYAR_PARAM in params and BAYAR_PARAM in names:
        params[BAYAR_PARAM] = bayar_reproject(params[BAYAR_PARAM])
