"""Generated datasets on disk and their tab-separated manifests.

A manifest line is ``image-path<TAB>mask-path<TAB>kind<TAB>split`` with
paths relative to the manifest's directory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netpbm import load_mask, load_ppm, save_pgm, save_ppm
from .synth import KINDS, Sample, make_background, synthesize

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"
DONOR_POOL_SIZE = 8


class ManifestError(ValueError):
    """Malformed manifest or unresolvable entry."""


@dataclass(frozen=True)
class Entry:
    image: Path
    mask: Path
    kind: str
    split: str


@dataclass
class Manifest:
    entries: list[Entry]
    root: Path

    def split(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def write(self, path: Path) -> None:
        lines = []
        for e in self.entries:
            lines.append(
                "\t".join(
                    [
                        e.image.relative_to(self.root).as_posix(),
                        e.mask.relative_to(self.root).as_posix(),
                        e.kind,
                        e.split,
                    ]
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    root = path.parent
    entries = []
    seen_images: dict[Path, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        img, msk, kind, split = parts
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        entry = Entry(root / img, root / msk, kind, split)
        for p in (entry.image, entry.mask):
            if not p.is_file():
                raise ManifestError(f"{path}:{lineno}: file not found: {p}")
        if entry.image in seen_images and seen_images[entry.image] != split:
            raise ManifestError(f"{path}:{lineno}: {img} appears in splits {seen_images[entry.image]} and {split}")
        seen_images[entry.image] = split
        entries.append(entry)
    return Manifest(entries, root)


def load_entry(entry: Entry) -> tuple[np.ndarray, np.ndarray]:
    return load_ppm(entry.image), load_mask(entry.mask)


def split_counts(count: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``count`` items over three splits.

    Every split with a positive ratio gets at least one item.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"split ratios must be three non-negative numbers, got {ratios}")
    total = float(sum(ratios))
    exact = [count * r / total for r in ratios]
    counts = [math.floor(x) for x in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: count - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if ratios[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            if counts[donor] > 1:
                counts[donor] -= 1
                counts[i] += 1
    return tuple(counts)


def donor_pool(seed: int, h: int, w: int, size: int = DONOR_POOL_SIZE) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 0xD0])
    return [make_background(rng, h, w) for _ in range(size)]


def make_sample(seed: int, index: int, h: int, w: int, pool: list[np.ndarray]) -> Sample:
    """Sample ``index`` of the dataset for ``seed``; an independent RNG stream per index."""
    rng = np.random.default_rng([seed, index])
    kind = KINDS[int(rng.integers(0, len(KINDS)))]
    background = make_background(rng, h, w)
    return synthesize(kind, background, pool, rng)


def generate_dataset(
    count: int,
    split_ratios: Sequence[float],
    out_dir,
    seed: int,
    size: tuple[int, int] = (64, 64),
) -> Manifest:
    """Write ``count`` samples as PPM/PGM pairs plus ``manifest.tsv`` under ``out_dir``."""
    if count < 3:
        raise ValueError(f"count must be at least 3, got {count}")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    h, w = size
    pool = donor_pool(seed, h, w)
    counts = split_counts(count, split_ratios)
    order = np.random.default_rng([seed, 0x5B]).permutation(count)
    split_of = np.empty(count, dtype=object)
    start = 0
    for name, n in zip(SPLITS, counts):
        split_of[order[start : start + n]] = name
        start += n
    entries = []
    for i in range(count):
        sample = make_sample(seed, i, h, w, pool)
        img_path = out / "images" / f"{i:05d}.ppm"
        mask_path = out / "masks" / f"{i:05d}.pgm"
        save_ppm(img_path, sample.image)
        save_pgm(mask_path, sample.mask)
        entries.append(Entry(img_path, mask_path, sample.meta.kind, str(split_of[i])))
    manifest = Manifest(entries, out)
    manifest.write(out / MANIFEST_NAME)
    return manifest
