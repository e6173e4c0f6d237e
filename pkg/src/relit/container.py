"""Single-file scene container: magic ``RLP1``, little-endian, CRC-checked sections.

Each section is (name, payload) with a CRC32 over the payload; readers skip
sections they do not recognize, so checkpoints can carry optimizer state next
to the plain model and older tools still load the model part. Round trips
are byte-exact: section order and encodings are deterministic.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .images import atomic_write_bytes
from .network import NetConfig
from .scene import DescriptorSet, LightColors, PointCloud, SceneModel

MAGIC = b"RLP1"
VERSION = 1

_KIND_BYTES = 0
_KIND_ARRAY = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<i8"),
    2: np.dtype("<i4"),
    3: np.dtype("u1"),
    4: np.dtype("<f8"),
}
_DTYPE_TAGS = {v: k for k, v in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_TAGS:
        raise ContainerError(f"unsupported array dtype {arr.dtype}")
    head = struct.pack("<BBB", _KIND_ARRAY, _DTYPE_TAGS[dt], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + dims + arr.astype(dt).tobytes()


def _decode_payload(payload: bytes):
    if not payload:
        raise ContainerError("empty section payload")
    kind = payload[0]
    if kind == _KIND_BYTES:
        return payload[1:]
    if kind != _KIND_ARRAY:
        raise ContainerError(f"unknown payload kind {kind}")
    if len(payload) < 3:
        raise ContainerError("truncated array header")
    tag, ndim = payload[1], payload[2]
    if tag not in _DTYPES:
        raise ContainerError(f"unknown array dtype tag {tag}")
    off = 3 + 4 * ndim
    if len(payload) < off:
        raise ContainerError("truncated array dims")
    shape = struct.unpack(f"<{ndim}I", payload[3:off]) if ndim else ()
    dt = _DTYPES[tag]
    n = int(np.prod(shape)) if shape else 1
    if len(payload) - off != n * dt.itemsize:
        raise ContainerError("array payload length disagrees with its shape")
    return np.frombuffer(payload[off:], dtype=dt).reshape(shape).copy()


def _encode_section(value) -> bytes:
    if isinstance(value, bytes):
        return bytes([_KIND_BYTES]) + value
    return _encode_array(np.asarray(value))


def write_container(path, sections: dict) -> None:
    """Write named sections (bytes or ndarray values) in sorted order."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(sections)))
    for name in sorted(sections):
        payload = _encode_section(sections[name])
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        buf.write(payload)
    atomic_write_bytes(path, buf.getvalue())


def read_container(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError("bad magic; not a scene container")
    if len(data) < 12:
        raise ContainerError("truncated header")
    version, count = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (expected {VERSION})")
    out = {}
    off = 12
    for _ in range(count):
        if off + 2 > len(data):
            raise ContainerError("truncated section name length")
        (nlen,) = struct.unpack("<H", data[off : off + 2])
        off += 2
        if off + nlen + 12 > len(data):
            raise ContainerError("truncated section header")
        name = data[off : off + nlen].decode(errors="replace")
        off += nlen
        plen, crc = struct.unpack("<QI", data[off : off + 12])
        off += 12
        if off + plen > len(data):
            raise ContainerError(f"truncated payload in section {name!r}")
        payload = data[off : off + plen]
        off += plen
        if zlib.crc32(payload) != crc:
            raise ContainerError(f"checksum mismatch in section {name!r}")
        out[name] = _decode_payload(payload)
    return out


# -- scene model ------------------------------------------------------------


def save_scene(path, model: SceneModel, extras: dict | None = None) -> None:
    meta = {
        "descriptor_dim": model.descriptors.width,
        "trained_steps": model.trained_steps,
        "net_config": model.net_config.to_dict() if model.net_config else None,
    }
    sections = {
        "meta": json.dumps(meta, sort_keys=True).encode(),
        "cloud/positions": model.cloud.positions.astype(np.float32),
        "desc/values": model.descriptors.values,
        "lights/c_room": model.lights.c_room,
        "lights/c_flash": model.lights.c_flash,
        "tex/albedo_half": model.albedo_halftex,
    }
    for name, arr in model.net_params.items():
        sections[f"param/{name}"] = np.asarray(arr, dtype=np.float32)
    for name, value in (extras or {}).items():
        if name in sections:
            raise ContainerError(f"extra section {name!r} collides with a model section")
        sections[name] = value
    write_container(path, sections)


def load_scene(path) -> tuple[SceneModel, dict]:
    """Model plus any extra sections (checkpoint state, unknown additions)."""
    sections = read_container(path)
    try:
        meta = json.loads(sections.pop("meta").decode())
        cloud = PointCloud(sections.pop("cloud/positions"))
        desc = DescriptorSet(sections.pop("desc/values"))
        lights = LightColors(sections.pop("lights/c_room"), sections.pop("lights/c_flash"))
        tex = sections.pop("tex/albedo_half")
    except KeyError as e:
        raise ContainerError(f"missing model section {e}") from e
    params = {}
    for name in [n for n in sections if n.startswith("param/")]:
        params[name[len("param/") :]] = sections.pop(name)
    net_config = NetConfig.from_dict(meta["net_config"]) if meta.get("net_config") else None
    model = SceneModel(
        cloud=cloud,
        descriptors=desc,
        net_params=params,
        lights=lights,
        albedo_halftex=tex,
        net_config=net_config,
        trained_steps=int(meta.get("trained_steps", 0)),
    )
    return model, sections
