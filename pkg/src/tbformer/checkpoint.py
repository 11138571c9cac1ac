"""Binary parameter files.

Layout (little-endian): magic ``TBF1``, u32 version, u32 tensor count; per
tensor a u16 name length, the UTF-8 name, u8 rank, u32 extents, then float32
data; a trailing u32 CRC32 of every preceding byte.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TBF1"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, corrupted, or mismatched checkpoint file."""


def encode(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded (name or rank too large)")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file corrupted or truncated)")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError(f"checkpoint truncated at byte {pos}")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = data
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after {count} tensors")
    return out


def checkpoint_save(params: Mapping[str, np.ndarray], path) -> None:
    path = Path(path)
    blob = encode(params)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def checkpoint_load(path, template: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; with ``template``, names and shapes must match it exactly."""
    params = decode(Path(path).read_bytes())
    if template is not None:
        unknown = [k for k in params if k not in template]
        if unknown:
            raise CheckpointError(f"unknown tensor name(s) in checkpoint: {unknown[:5]}")
        missing = [k for k in template if k not in params]
        if missing:
            raise CheckpointError(f"checkpoint lacks tensor(s): {missing[:5]}")
        for k, v in template.items():
            if params[k].shape != np.shape(v):
                raise CheckpointError(f"tensor {k!r}: shape {params[k].shape} != expected {np.shape(v)}")
    return params
