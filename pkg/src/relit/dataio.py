"""Dataset manifests, the PLY point-cloud subset, and dataset save/load.

A dataset on disk is a JSON manifest naming per-frame files (image, mask,
optional posmap / face normals / ground-truth maps), the camera for each
frame, a point-cloud PLY and a validation split. Face-normal maps encode
validity implicitly: texels with near-zero norm are invalid.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from . import images
from .scene import Camera, Frame, PointCloud
from .synthetic import OracleMaps, SyntheticDataset


class ManifestError(ValueError):
    pass


class PlyError(ValueError):
    pass


# -- PLY (binary little-endian, float32 vertices) ----------------------------

_PLY_FLOAT_NAMES = {"float", "float32"}


def write_ply(path, cloud: PointCloud) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {cloud.count}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    body = cloud.positions.astype("<f4").tobytes()
    images.atomic_write_bytes(path, header.encode("ascii") + body)


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyError(f"{path}: not a PLY file")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n") :]

    fmt_lines = [l for l in lines if l.startswith("format ")]
    if fmt_lines != ["format binary_little_endian 1.0"]:
        raise PlyError(f"{path}: only binary little-endian 1.0 is supported")
    n_vertex = None
    props: list = []
    current_element = None
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment" or parts[0] == "format":
            continue
        if parts[0] == "element":
            current_element = parts[1]
            if parts[1] == "vertex":
                n_vertex = int(parts[2])
        elif parts[0] == "property":
            if current_element != "vertex":
                raise PlyError(f"{path}: only vertex elements are supported")
            if len(parts) != 3 or parts[1] not in _PLY_FLOAT_NAMES:
                raise PlyError(f"{path}: unsupported property {line!r}")
            props.append(parts[2])
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"{path}: unsupported header line {line!r}")
    if n_vertex is None:
        raise PlyError(f"{path}: missing vertex element")
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise PlyError(f"{path}: missing float property {axis!r}")
    stride = len(props)
    if len(body) < 4 * stride * n_vertex:
        raise PlyError(f"{path}: truncated vertex data")
    arr = np.frombuffer(body[: 4 * stride * n_vertex], dtype="<f4").reshape(n_vertex, stride)
    cols = [props.index(a) for a in ("x", "y", "z")]
    return PointCloud(arr[:, cols].astype(np.float64))


# -- manifest -----------------------------------------------------------------


def camera_to_json(camera: Camera) -> dict:
    return {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "r": [float(v) for v in camera.rotation.reshape(-1)],
        "t": [float(v) for v in camera.translation],
        "w": camera.width,
        "h": camera.height,
    }


def camera_from_json(d: dict) -> Camera:
    try:
        r = np.asarray(d["r"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(d["t"], dtype=np.float64).reshape(3)
        fx, fy, cx, cy = (float(d[k]) for k in ("fx", "fy", "cx", "cy"))
        w, h = int(d["w"]), int(d["h"])
    except (KeyError, TypeError) as e:
        raise ManifestError(f"camera JSON missing field: {e}") from e
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > 1e-4:
        raise ManifestError(f"camera rotation is not orthonormal (deviation {err:.2e})")
    if err > 1e-6:  # snap storage rounding back onto SO(3)
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return Camera(fx, fy, cx, cy, r, t, w, h)


def _resolve(base: Path, rel: str) -> Path:
    p = base / rel
    if not p.exists():
        raise ManifestError(f"referenced file does not exist: {p}")
    return p


def load_dataset(manifest_path) -> tuple[list, PointCloud, dict]:
    """Frames, point cloud and the parsed global table of a dataset manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    base = manifest_path.parent
    glob = manifest.get("global", {})
    if "cloud" not in glob:
        raise ManifestError("manifest global table must name a point cloud")
    cloud = read_ply(_resolve(base, glob["cloud"]))

    frames = []
    for i, fr in enumerate(manifest.get("frames", [])):
        try:
            image = images.load_image(_resolve(base, fr["image"]))
            mask = images.load_mask(_resolve(base, fr["mask"]))
            camera = camera_from_json(fr["camera"])
            flash = bool(fr["flash"])
        except KeyError as e:
            raise ManifestError(f"frame {i} missing field {e}") from e
        posmap = None
        if fr.get("posmap"):
            posmap = images.read_f32(_resolve(base, fr["posmap"]))
        face_normals = face_mask = None
        if fr.get("face_normals"):
            face_normals = images.read_f32(_resolve(base, fr["face_normals"]))
            face_mask = (np.linalg.norm(face_normals, axis=-1) > 0.5).astype(np.float32)
        frames.append(
            Frame(
                image=image,
                mask=mask,
                camera=camera,
                flash=flash,
                posmap=posmap,
                face_normals=face_normals,
                face_mask=face_mask,
            )
        )
    if not frames:
        raise ManifestError("manifest contains no frames")
    return frames, cloud, glob


def save_dataset(dataset: SyntheticDataset, out_dir, descriptor_dim: int = 8, notes: str = "") -> Path:
    """Write a synthetic dataset (frames, gt maps, cloud, manifest); returns the manifest path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)

    entries = []
    for i, frame in enumerate(dataset.frames):
        stem = f"frames/{i:04d}"
        images.write_f32(out / f"{stem}_image.f32", frame.image)
        images.write_f32(out / f"{stem}_mask.f32", frame.mask)
        entry = {
            "image": f"{stem}_image.f32",
            "mask": f"{stem}_mask.f32",
            "camera": camera_to_json(frame.camera),
            "flash": frame.flash,
        }
        if frame.posmap is not None:
            images.write_f32(out / f"{stem}_posmap.f32", frame.posmap)
            entry["posmap"] = f"{stem}_posmap.f32"
        if frame.face_normals is not None:
            images.write_f32(out / f"{stem}_face_normals.f32", frame.face_normals)
            entry["face_normals"] = f"{stem}_face_normals.f32"
        gt = dataset.gt_maps[i] if dataset.gt_maps else None
        if gt is not None:
            images.write_f32(out / f"{stem}_gt_albedo.f32", gt.albedo)
            images.write_f32(out / f"{stem}_gt_normals.f32", gt.normals)
            images.write_f32(out / f"{stem}_gt_shadow.f32", gt.shadow)
            entry["gt_albedo"] = f"{stem}_gt_albedo.f32"
            entry["gt_normals"] = f"{stem}_gt_normals.f32"
            entry["gt_shadow"] = f"{stem}_gt_shadow.f32"
        entries.append(entry)

    write_ply(out / "cloud.ply", dataset.cloud)
    manifest = {
        "frames": entries,
        "global": {
            "cloud": "cloud.ply",
            "descriptor_dim": descriptor_dim,
            "notes": notes,
            "val_indices": list(dataset.val_indices),
        },
    }
    path = out / "manifest.json"
    images.atomic_write_bytes(path, json.dumps(manifest, indent=1).encode())
    return path


def load_synthetic_dataset(manifest_path) -> SyntheticDataset:
    """Reload a dataset with its ground-truth maps and split for evaluation."""
    manifest_path = Path(manifest_path)
    frames, cloud, glob = load_dataset(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    gt_maps = []
    for i, fr in enumerate(manifest["frames"]):
        if not fr.get("gt_albedo"):
            gt_maps = []
            break
        gt_maps.append(
            OracleMaps(
                albedo=images.read_f32(_resolve(base, fr["gt_albedo"])),
                normals=images.read_f32(_resolve(base, fr["gt_normals"])),
                shadow=images.read_f32(_resolve(base, fr["gt_shadow"])),
                mask=(frames[i].mask > 0.5).astype(np.float32),
            )
        )
    return SyntheticDataset(
        scene=None,
        frames=frames,
        gt_maps=gt_maps,
        val_indices=list(glob.get("val_indices", [])),
        cloud=cloud,
    )
