"""Image, mask and raster persistence.

``.f32`` lossless raster layout (all little-endian)::

    bytes 0..3   magic b"F32" followed by a one-byte format version (1)
    bytes 4..15  height, width, channels as uint32
    bytes 16..   row-major float32 payload, H * W * C values

PNGs are 8-bit and for viewing only; metrics always read the ``.f32`` file.
Masks are 1-bit PNGs with 1 = artifact / regenerate.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError

F32_MAGIC = b"F32"
F32_VERSION = 1
_HEADER = struct.Struct("<3sBIII")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_f32(img: np.ndarray) -> bytes:
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    return _HEADER.pack(F32_MAGIC, F32_VERSION, h, w, c) + np.ascontiguousarray(arr).tobytes()


def decode_f32(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size:
        raise IngestionError(f"{source}: truncated raster header")
    magic, version, h, w, c = _HEADER.unpack_from(data)
    if magic != F32_MAGIC or version != F32_VERSION:
        raise IngestionError(f"{source}: not a version-{F32_VERSION} .f32 raster")
    expected = _HEADER.size + 4 * h * w * c
    if len(data) != expected:
        raise IngestionError(f"{source}: payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w, c).astype(np.float32)


def write_f32(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, encode_f32(img))


def read_f32(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror or exc}") from exc
    return decode_f32(data, str(path))


def _png_bytes(pil: Image.Image) -> bytes:
    import io

    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    atomic_write_bytes(path, _png_bytes(Image.fromarray(u8)))


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write_bytes(path, _png_bytes(Image.fromarray(np.asarray(mask).astype(bool)).convert("1")))


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read mask ({exc})") from exc
    return (arr > 127).astype(np.uint8)


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mode = "L" if im.mode in ("1", "L", "I", "I;16", "F") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read image ({exc})") from exc
    return arr[..., None] if arr.ndim == 2 else arr


def read_image(path) -> np.ndarray:
    """Load an (H, W, C) float32 image from ``.f32`` (exact) or PNG (8-bit)."""
    path = Path(path)
    if path.suffix == ".f32":
        return read_f32(path)
    return read_png(path)


def write_image(stem, img: np.ndarray) -> None:
    """Write ``<stem>.f32`` and the viewing copy ``<stem>.png``."""
    stem = Path(stem)
    write_f32(stem.with_suffix(".f32"), img)
    write_png(stem.with_suffix(".png"), img)
