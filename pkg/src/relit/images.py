"""Image interchange: raw float maps, 8-bit PNG, and the sRGB transfer curve.

Float maps use a tiny ``.f32`` format (magic, H, W, C, little-endian data)
so HDR images, masks, posmaps and normals round-trip exactly. PNGs are
assumed sRGB-encoded and are linearized on load. All writers go through a
temp-file-and-rename so failures never leave partial outputs.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile

import numpy as np
from PIL import Image

F32_MAGIC = b"F32I"


class ImageFormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_f32(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ImageFormatError("f32 maps must be (H, W) or (H, W, C)")
    h, w, c = arr.shape
    payload = F32_MAGIC + struct.pack("<III", h, w, c) + np.ascontiguousarray(arr).tobytes()
    atomic_write_bytes(path, payload)


def read_f32(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != F32_MAGIC:
        raise ImageFormatError(f"{path}: not an f32 map")
    if len(data) < 16:
        raise ImageFormatError(f"{path}: truncated f32 header")
    h, w, c = struct.unpack("<III", data[4:16])
    expect = 16 + 4 * h * w * c
    if len(data) != expect:
        raise ImageFormatError(f"{path}: f32 payload length mismatch")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).copy()
    return arr[..., 0] if c == 1 else arr


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def load_image(path) -> np.ndarray:
    """Decode to linear light: .f32 taken as-is, PNG linearized from sRGB."""
    path = os.fspath(path)
    if path.endswith(".f32"):
        return read_f32(path).astype(np.float32)
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr).astype(np.float32)


def load_mask(path) -> np.ndarray:
    """Masks are unit-interval data; PNG masks are read without gamma."""
    path = os.fspath(path)
    if path.endswith(".f32"):
        arr = read_f32(path)
        if arr.ndim == 3:
            arr = arr[..., 0]
        return arr.astype(np.float32)
    with Image.open(path) as img:
        return (np.asarray(img.convert("L"), dtype=np.float32) / 255.0).astype(np.float32)


def encode_png(linear_rgb: np.ndarray) -> bytes:
    """Deterministic 8-bit sRGB PNG bytes from a linear (H, W, 3) image."""
    srgb = linear_to_srgb(linear_rgb)
    quantized = np.round(srgb * 255.0).astype(np.uint8)
    if quantized.ndim != 3 or quantized.shape[2] != 3:
        raise ImageFormatError("PNG encoding expects an (H, W, 3) image")
    buf = io.BytesIO()
    Image.fromarray(quantized).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, linear_rgb: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(linear_rgb))
