"""Constrained high-pass convolution turning an RGB image into a noise residual.

Each 2-D kernel slice (one output channel, one input channel) has its center
tap pinned to -1 and its remaining taps summing to 1, so the filter is a
learned prediction-error operator that removes local image content.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from . import numerics as nx
from .numerics import Tensor

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-6


class BayarConstraintError(ValueError):
    """Kernels do not satisfy the center/-1, surround/+1 constraint."""


def _center_mask(k: int) -> np.ndarray:
    m = np.ones((k, k), dtype=bool)
    m[k // 2, k // 2] = False
    return m


def constraint_violation(kernels: np.ndarray) -> float:
    """Largest deviation from the constraint over all kernel slices."""
    k = kernels.shape[-1]
    c = k // 2
    center_err = np.abs(kernels[..., c, c] + 1.0).max()
    surround = np.where(_center_mask(k), kernels, 0.0).sum(axis=(-1, -2), dtype=np.float64)
    return float(max(center_err, np.abs(surround - 1.0).max()))


def bayar_reproject(kernels: np.ndarray) -> np.ndarray:
    """Project kernels (``C_out x C_in x k x k``) back onto the constraint set.

    Slices already within tolerance are returned untouched, which makes the
    projection idempotent at the storage precision. A slice whose surround
    sums to zero cannot be rescaled and is reset to the uniform filter.
    """
    k = kernels.shape[-1]
    if kernels.ndim != 4 or kernels.shape[-2] != k or k % 2 == 0:
        raise BayarConstraintError(f"kernels must be C_out x C_in x k x k with odd k, got {kernels.shape}")
    c = k // 2
    mask = _center_mask(k)
    out = np.array(kernels, copy=True)
    wide = out.astype(np.float64)
    for o in range(out.shape[0]):
        for i in range(out.shape[1]):
            sl = wide[o, i]
            surround = sl[mask].sum()
            if sl[c, c] == -1.0 and abs(surround - 1.0) <= CONSTRAINT_TOL / 10:
                continue
            if abs(surround) < 1e-12:
                warnings.warn(
                    f"bayar kernel ({o},{i}) has zero surround sum; reinitialized to uniform",
                    RuntimeWarning,
                    stacklevel=2,
                )
                logger.warning("bayar kernel (%d,%d) reinitialized", o, i)
                sl = np.where(mask, 1.0 / (k * k - 1), 0.0)
            else:
                sl = np.where(mask, sl / surround, 0.0)
            sl[c, c] = -1.0
            out[o, i] = sl
            _absorb_rounding(out[o, i], mask)
    return out


def _absorb_rounding(sl: np.ndarray, mask: np.ndarray, rounds: int = 4) -> None:
    """Fold the surround-sum residual left by casting into the smallest tap.

    Large mixed-sign taps lose ~1e-7 relative each when stored as float32,
    which can add up past the tolerance; the smallest tap has the finest
    rounding step, so absorbing the residual there removes nearly all of it.
    """
    taps = np.flatnonzero(mask.reshape(-1))
    flat = sl.reshape(-1)
    for _ in range(rounds):
        resid = 1.0 - flat[taps].sum(dtype=np.float64)
        if resid == 0.0:
            return
        j = taps[np.argmin(np.abs(flat[taps]))]
        flat[j] = flat[j] + resid


def init_bayar(rng: np.random.Generator, channels: int = 3, k: int = 5) -> np.ndarray:
    raw = rng.uniform(0.0, 1.0, size=(channels, channels, k, k))
    return bayar_reproject(raw)


def bayar_forward(image: Tensor, kernels: Tensor, strict: bool = True) -> Tensor:
    """Noise map of a ``3 x H x W`` image; spatial size is preserved.

    Borders are edge-replicated rather than zero-padded.

    ``strict`` rejects kernels off the constraint set. Finite-difference
    probing perturbs individual taps and turns it off.
    """
    if strict:
        err = constraint_violation(kernels.data)
        if err > CONSTRAINT_TOL:
            raise BayarConstraintError(
                f"bayar kernels violate the constraint by {err:.3e}; call bayar_reproject first"
            )
    k = kernels.shape[-1]
    # replicated borders keep flat regions (including the frame) at zero response
    return nx.conv2d(nx.pad_edge(image, (k - 1) // 2), kernels, None, stride=1, pad=0)
