"""Robustness distortions: bilinear downscale, Gaussian blur, JPEG quantization.

The JPEG operator is an in-memory simulation (8x8 DCT, IJG-scaled
quantization, dequantization, inverse DCT) with no entropy coding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numerics import interp_matrix

KINDS = ("resize", "gaussian_blur", "jpeg")
_ALIASES = {"blur": "gaussian_blur", "gaussianblur": "gaussian_blur", "jpegcompress": "jpeg"}

# ITU-T T.81 Annex K.1 luminance table
LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


class DistortionError(ValueError):
    """Invalid distortion specification."""


@dataclass(frozen=True)
class Distortion:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DistortionError(f"unknown distortion {self.kind!r}; expected one of {KINDS}")
        if self.kind == "resize" and not 0.0 < self.param <= 1.0:
            raise DistortionError(f"resize factor must lie in (0, 1], got {self.param}")
        if self.kind == "gaussian_blur" and (
            self.param != int(self.param) or self.param < 3 or int(self.param) % 2 == 0
        ):
            raise DistortionError(f"blur kernel size must be an odd integer >= 3, got {self.param}")
        if self.kind == "jpeg" and (self.param != int(self.param) or not 1 <= self.param <= 100):
            raise DistortionError(f"jpeg quality must be an integer in [1, 100], got {self.param}")

    @classmethod
    def parse(cls, text: str) -> "Distortion":
        """Parse ``KIND:PARAM``, e.g. ``resize:0.78``, ``blur:15``, ``jpeg:50``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise DistortionError(f"distortion {text!r} must look like KIND:PARAM")
        kind = kind.strip().lower()
        kind = _ALIASES.get(kind, kind)
        try:
            param = float(value)
        except ValueError:
            raise DistortionError(f"distortion {text!r}: parameter {value!r} is not a number") from None
        return cls(kind, param)

    @property
    def label(self) -> str:
        if self.kind == "resize":
            return f"Resize({self.param:g}x)"
        if self.kind == "gaussian_blur":
            return f"GaussianBlur(k={int(self.param)})"
        return f"JPEGCompress(q={int(self.param)})"

    def __str__(self) -> str:
        return f"{self.kind}:{self.param:g}"


def resize(image: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear downscale of a ``C x H x W`` image; output extents ``round(H * factor)``."""
    c, h, w = image.shape
    ho, wo = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    if (ho, wo) == (h, w):
        return np.array(image, dtype=np.float64, copy=True)
    return resize_to(image, ho, wo)


def resize_to(image: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    ry = interp_matrix(image.shape[1], h_out)
    rx = interp_matrix(image.shape[2], w_out)
    return np.clip(ry @ np.asarray(image, dtype=np.float64) @ rx.T, 0.0, 1.0)


def gaussian_sigma(k: int) -> float:
    return 0.3 * ((k - 1) / 2 - 1) + 0.8


def gaussian_kernel(k: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps for an odd kernel size ``k``."""
    if k < 3 or k % 2 == 0:
        raise DistortionError(f"blur kernel size must be odd and >= 3, got {k}")
    sigma = gaussian_sigma(k)
    x = np.arange(k, dtype=np.float64) - (k - 1) / 2
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(image: np.ndarray, k: int) -> np.ndarray:
    """Separable blur with edge-replicated borders."""
    taps = gaussian_kernel(k)
    r = k // 2
    img = np.asarray(image, dtype=np.float64)
    _, h, w = img.shape
    padded = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="edge")
    rows = sum(taps[i] * padded[:, i : i + h, :] for i in range(k))
    padded = np.pad(rows, ((0, 0), (0, 0), (r, r)), mode="edge")
    out = sum(taps[i] * padded[:, :, i : i + w] for i in range(k))
    return np.clip(out, 0.0, 1.0)


def quality_table(quality: int) -> np.ndarray:
    """IJG quality scaling of the luminance table."""
    q = int(quality)
    scale = 5000 / q if q < 50 else 200 - 2 * q
    table = np.floor((LUMA_QTABLE * scale + 50) / 100)
    return np.clip(table, 1, 255)


def _dct_matrix(n: int = 8) -> np.ndarray:
    m = np.zeros((n, n))
    for k in range(n):
        a = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        for i in range(n):
            m[k, i] = a * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
    return m


_DCT8 = _dct_matrix(8)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[0], ycc[1] - 128.0, ycc[2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b])


def jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    """Blockwise DCT quantization of a ``3 x H x W`` image at IJG ``quality``.

    Works on YCbCr planes at full resolution (no chroma subsampling), all
    quantized with the scaled luminance table; decoded samples are rounded
    to 8 bits.
    """
    img = np.asarray(image, dtype=np.float64)
    _, h, w = img.shape
    ph, pw = (-h) % 8, (-w) % 8
    px = np.pad(np.rint(np.clip(img, 0, 1) * 255.0), ((0, 0), (0, ph), (0, pw)), mode="edge")
    planes = rgb_to_ycbcr(px) - 128.0
    c, hh, ww = planes.shape
    blocks = planes.reshape(c, hh // 8, 8, ww // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = _DCT8 @ blocks @ _DCT8.T
    table = quality_table(quality)
    coef = np.rint(coef / table) * table
    rec = (_DCT8.T @ coef @ _DCT8).transpose(0, 1, 3, 2, 4).reshape(c, hh, ww) + 128.0
    rgb = np.clip(np.rint(ycbcr_to_rgb(np.clip(np.rint(rec), 0, 255))), 0, 255)
    return rgb[:, :h, :w] / 255.0


def distort(image: np.ndarray, spec: Distortion | str) -> np.ndarray:
    spec = Distortion.parse(spec) if isinstance(spec, str) else spec
    if spec.kind == "resize":
        return resize(image, spec.param)
    if spec.kind == "gaussian_blur":
        return gaussian_blur(image, int(spec.param))
    return jpeg(image, int(spec.param))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)
