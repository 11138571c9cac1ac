"""Binary PPM (P6) and PGM (P5) images with maxval 255.

Images are ``3 x H x W`` float arrays in [0, 1]; masks and gray maps are
``H x W``. Scaling is ``/ 255`` on load and ``round(x * 255)`` on save.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    """Malformed or unsupported PPM/PGM data."""


def _read_header(blob: bytes, magic: bytes) -> tuple[int, int, int]:
    """Parse ``magic width height maxval``; returns (width, height, payload offset)."""
    if blob[:2] != magic:
        raise NetpbmError(f"byte 0: expected magic {magic!r}, found {blob[:2]!r}")
    fields: list[int] = []
    pos = 2
    n = len(blob)
    while len(fields) < 3:
        if pos >= n:
            raise NetpbmError(f"byte {pos}: header truncated")
        c = blob[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < n and blob[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise NetpbmError(f"byte {pos}: unexpected header byte {c!r}")
    if pos >= n or not blob[pos : pos + 1].isspace():
        raise NetpbmError(f"byte {pos}: missing whitespace after header")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise NetpbmError(f"byte 2: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"byte 2: unsupported maxval {maxval} (only 255 is supported)")
    return width, height, pos + 1


def _payload(blob: bytes, offset: int, count: int) -> np.ndarray:
    if len(blob) - offset < count:
        raise NetpbmError(f"byte {len(blob)}: payload truncated, expected {count} bytes from offset {offset}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset)


def _to_bytes(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NetpbmError("cannot save non-finite values")
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def decode_ppm(blob: bytes) -> np.ndarray:
    w, h, off = _read_header(blob, b"P6")
    data = _payload(blob, off, w * h * 3).reshape(h, w, 3)
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def decode_pgm(blob: bytes) -> np.ndarray:
    w, h, off = _read_header(blob, b"P5")
    return _payload(blob, off, w * h).reshape(h, w).astype(np.float64) / 255.0


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise NetpbmError(f"PPM needs a 3 x H x W image, got shape {image.shape}")
    _, h, w = image.shape
    return f"P6\n{w} {h}\n255\n".encode() + _to_bytes(image).transpose(1, 2, 0).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise NetpbmError(f"PGM needs an H x W array, got shape {gray.shape}")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + _to_bytes(gray).tobytes()


def load_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def save_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def load_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def save_pgm(path, gray: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(gray))


def load_mask(path) -> np.ndarray:
    """Binary mask from a PGM: pixels >= 0.5 are forged."""
    return (load_pgm(path) >= 0.5).astype(np.float64)
