"""``I2IU`` checkpoints and binary PGM image grids.

Checkpoint layout (little-endian): ``b"I2IU"``, u32 version (1), u32 array
count, then per array: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
row-major float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .gradcore import ContractError, ModelParams

MAGIC = b"I2IU"
VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_checkpoint(params: ModelParams) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> ModelParams:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointFormatError(f"truncated {what}: need {n} bytes, have {len(buf) - pos}", pos)
        out = buf[pos : pos + n]
        pos += n
        return out

    magic = take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = take(n, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("name is not valid UTF-8", start) from exc
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count_vals = int(np.prod(dims)) if rank else 1
        payload = take(4 * count_vals, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - pos} trailing bytes", pos)
    return ModelParams.from_arrays(arrays)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path) -> ModelParams:
    return decode_checkpoint(Path(path).read_bytes())


def emit_pgm_grid(images: Sequence[np.ndarray], cols: int, path, sep_value: int = 128) -> tuple[int, int]:
    """Tile equally-sized images row-major with 1-pixel separators; returns (height, width)."""
    if len(images) == 0:
        raise ContractError("emit_pgm_grid: no images")
    if cols < 1:
        raise ContractError("emit_pgm_grid: cols must be >= 1")
    h, w = np.asarray(images[0]).shape
    cols = min(cols, len(images))
    rows = -(-len(images) // cols)
    H, W = rows * h + rows - 1, cols * w + cols - 1
    canvas = np.full((H, W), sep_value, dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        px = np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
        canvas[r * (h + 1) : r * (h + 1) + h, c * (w + 1) : c * (w + 1) + w] = px
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode("ascii") + canvas.tobytes())
    return H, W
