"""Procedural forgeries: splice, copy-move and removal with concealed placement.

Backgrounds are smooth random color fields with a linear gradient and a
per-image sensor-noise level, so regions moved between images (or
inpainted) carry a texture mismatch. Insertions are placed where the
concealment score

    |mean(region) - mean(ring)|_1 + |std(region) - std(ring)|_1

is smallest over a stride grid of candidate positions, where ``ring`` is a
band of pixels just outside the destination box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import interp_matrix

KINDS = ("splice", "copymove", "removal")
INPAINT_ITERS = 50


class PlacementError(RuntimeError):
    """No admissible position exists for the forged region."""


@dataclass
class SampleMeta:
    kind: str
    donor_id: int | None
    score: float
    bbox: tuple[int, int, int, int]  # y, x, h, w of the forged region
    source_bbox: tuple[int, int, int, int] | None = None


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    mask: np.ndarray  # H x W in {0, 1}
    meta: SampleMeta = field(repr=False, default=None)


@dataclass(frozen=True)
class Region:
    """A shape mask anchored at the top-left of its bounding box."""

    shape_mask: np.ndarray  # h x w bool

    @property
    def h(self) -> int:
        return self.shape_mask.shape[0]

    @property
    def w(self) -> int:
        return self.shape_mask.shape[1]

    @property
    def area(self) -> int:
        return int(self.shape_mask.sum())


def make_background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(0.1, 0.9, size=(3, int(rng.integers(2, 6)), int(rng.integers(2, 6))))
    field_ = interp_matrix(coarse.shape[1], h) @ coarse @ interp_matrix(coarse.shape[2], w).T
    gy, gx = np.meshgrid(np.linspace(-0.5, 0.5, h), np.linspace(-0.5, 0.5, w), indexing="ij")
    tilt = rng.uniform(-0.25, 0.25, size=(3, 2))
    field_ = field_ + tilt[:, :1, None] * gy + tilt[:, 1:, None] * gx
    sigma = rng.uniform(0.0, 0.06)
    field_ = field_ + sigma * rng.standard_normal((3, h, w))
    return np.clip(field_, 0.0, 1.0)


def random_region(rng: np.random.Generator, h: int, w: int) -> Region:
    rh = int(rng.integers(max(2, h // 5), max(3, h // 2) + 1))
    rw = int(rng.integers(max(2, w // 5), max(3, w // 2) + 1))
    if rng.random() < 0.5:
        m = np.ones((rh, rw), dtype=bool)
    else:
        yy, xx = np.meshgrid(
            (np.arange(rh) + 0.5) / rh - 0.5, (np.arange(rw) + 0.5) / rw - 0.5, indexing="ij"
        )
        m = yy * yy + xx * xx <= 0.25
    return Region(m)


def ring_width(region: Region) -> int:
    return max(2, min(region.h, region.w) // 4)


def ring_pixels(image: np.ndarray, y: int, x: int, region: Region) -> np.ndarray:
    """``3 x K`` pixels of the band around box (y, x, h, w), clipped to the image."""
    _, hh, ww = image.shape
    r = ring_width(region)
    y0, y1 = max(0, y - r), min(hh, y + region.h + r)
    x0, x1 = max(0, x - r), min(ww, x + region.w + r)
    band = np.ones((y1 - y0, x1 - x0), dtype=bool)
    band[y - y0 : y - y0 + region.h, x - x0 : x - x0 + region.w] = False
    return image[:, y0:y1, x0:x1][:, band]


def region_pixels(content: np.ndarray, region: Region) -> np.ndarray:
    """``3 x area`` pixels of a ``3 x h x w`` content patch under the shape mask."""
    return content[:, region.shape_mask]


def concealment_score(content: np.ndarray, region: Region, target: np.ndarray, y: int, x: int) -> float:
    inner = region_pixels(content, region)
    ring = ring_pixels(target, y, x, region)
    if ring.shape[1] == 0:
        return float("inf")
    return float(
        np.abs(inner.mean(axis=1) - ring.mean(axis=1)).sum() + np.abs(inner.std(axis=1) - ring.std(axis=1)).sum()
    )


def candidate_positions(h: int, w: int, region: Region, stride: int) -> list[tuple[int, int]]:
    return [(y, x) for y in range(0, h - region.h + 1, stride) for x in range(0, w - region.w + 1, stride)]


def _overlaps(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    ay, ax, ah, aw = a
    by, bx, bh, bw = b
    return ay < by + bh and by < ay + ah and ax < bx + bw and bx < ax + aw


def best_placement(
    content: np.ndarray,
    region: Region,
    target: np.ndarray,
    stride: int,
    forbid: tuple[int, int, int, int] | None = None,
) -> tuple[tuple[int, int], float]:
    """Argmin of the concealment score over the candidate grid (first minimum wins)."""
    _, h, w = target.shape
    best, best_score = None, np.inf
    for y, x in candidate_positions(h, w, region, stride):
        if forbid is not None and _overlaps((y, x, region.h, region.w), forbid):
            continue
        s = concealment_score(content, region, target, y, x)
        if s < best_score:
            best, best_score = (y, x), s
    if best is None:
        raise PlacementError(f"no admissible {region.h}x{region.w} placement in a {h}x{w} image")
    return best, best_score


def paste(target: np.ndarray, content: np.ndarray, region: Region, y: int, x: int) -> tuple[np.ndarray, np.ndarray]:
    out = np.array(target, copy=True)
    mask = np.zeros(target.shape[1:], dtype=np.float64)
    view = out[:, y : y + region.h, x : x + region.w]
    view[:, region.shape_mask] = content[:, region.shape_mask]
    mask[y : y + region.h, x : x + region.w][region.shape_mask] = 1.0
    return out, mask


def diffusion_inpaint(image: np.ndarray, hole: np.ndarray, iters: int = INPAINT_ITERS) -> np.ndarray:
    """Fill ``hole`` (H x W bool) by repeated 4-neighbor averaging; pixels outside stay fixed."""
    out = np.array(image, dtype=np.float64, copy=True)
    known = ~hole
    if known.any():
        out[:, hole] = out[:, known].mean(axis=1)[:, None]
    for _ in range(iters):
        p = np.pad(out, ((0, 0), (1, 1), (1, 1)), mode="edge")
        avg = 0.25 * (p[:, :-2, 1:-1] + p[:, 2:, 1:-1] + p[:, 1:-1, :-2] + p[:, 1:-1, 2:])
        out[:, hole] = avg[:, hole]
    return out


def default_stride(h: int, w: int) -> int:
    return max(1, min(h, w) // 16)


def synthesize(
    kind: str,
    background: np.ndarray,
    donor_pool: list[np.ndarray],
    rng: np.random.Generator,
    stride: int | None = None,
) -> Sample:
    """One forged sample from ``background``.

    ``splice`` cuts one region from every donor and keeps the donor/position
    pair with the lowest concealment score; ``copymove`` duplicates a region
    of the background to a non-overlapping position; ``removal`` inpaints a
    random region.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown forgery kind {kind!r}; expected one of {KINDS}")
    _, h, w = background.shape
    stride = default_stride(h, w) if stride is None else stride
    region = random_region(rng, h, w)
    if region.h >= h or region.w >= w:
        raise PlacementError(f"region {region.h}x{region.w} does not fit a {h}x{w} background")

    def cut(img: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
        _, ih, iw = img.shape
        if region.h > ih or region.w > iw:
            raise PlacementError(f"region {region.h}x{region.w} larger than donor {ih}x{iw}")
        sy = int(rng.integers(0, ih - region.h + 1))
        sx = int(rng.integers(0, iw - region.w + 1))
        return img[:, sy : sy + region.h, sx : sx + region.w], (sy, sx)

    if kind == "splice":
        if not donor_pool:
            raise ValueError("splice needs a non-empty donor pool")
        best = None
        for donor_id, donor in enumerate(donor_pool):
            content, _ = cut(donor)
            pos, score = best_placement(content, region, background, stride)
            if best is None or score < best[2]:
                best = (donor_id, content, score, pos)
        donor_id, content, score, (y, x) = best
        image, mask = paste(background, content, region, y, x)
        meta = SampleMeta(kind, donor_id, score, (y, x, region.h, region.w))
    elif kind == "copymove":
        content, (sy, sx) = cut(background)
        src = (sy, sx, region.h, region.w)
        (y, x), score = best_placement(content, region, background, stride, forbid=src)
        image, mask = paste(background, content, region, y, x)
        meta = SampleMeta(kind, None, score, (y, x, region.h, region.w), src)
    else:
        y = int(rng.integers(0, h - region.h + 1))
        x = int(rng.integers(0, w - region.w + 1))
        mask = np.zeros((h, w), dtype=np.float64)
        mask[y : y + region.h, x : x + region.w][region.shape_mask] = 1.0
        image = diffusion_inpaint(background, mask.astype(bool))
        filled = image[:, y : y + region.h, x : x + region.w]
        score = concealment_score(filled, region, image, y, x)
        meta = SampleMeta(kind, None, score, (y, x, region.h, region.w))
    return Sample(np.clip(image, 0.0, 1.0), mask, meta)
