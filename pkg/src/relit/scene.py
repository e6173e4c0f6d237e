"""Scene state: cameras, point clouds, per-point descriptors, light colors, frames.

Conventions used throughout:
  * world -> camera is ``x_c = R @ p + t`` with the camera looking down +z_cam,
  * pixel centers sit at integer coordinates, ``u`` grows with the column index
    and ``v`` with the row index,
  * images are linear-light floats in [0, 1] (gamma decoding happens at load).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

HALF_TEXTURE_SHAPE = (256, 128, 3)
TEXTURE_SIZE = 256


def _as_f64(a, shape) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with world->camera extrinsics.

    ``rotation`` and ``translation`` map world points into the camera frame;
    intrinsics are in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_f64(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_f64(self.translation, (3,)))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("canvas must be at least 1x1")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.2e})")
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @property
    def center(self) -> np.ndarray:
        """World-space position of the optical center (-R^T t)."""
        return -self.rotation.T @ self.translation

    def scaled(self, factor: float, width: int, height: int) -> "Camera":
        """Camera with intrinsics uniformly scaled by ``factor`` on a new canvas."""
        return replace(
            self,
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray  # (N, 3) world space

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, 3) array")
        if not np.isfinite(pos).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "positions", pos)
        pos.setflags(write=False)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass
class DescriptorSet:
    """Learnable per-point latent vectors, one row per cloud point."""

    values: np.ndarray  # (N, L) float32

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32))
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ValueError("descriptors must be (N, L) with L >= 1")
        self.values = vals

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class LightColors:
    """Global light colors: room tint (times grayscale-shadow scale) and flash tint."""

    c_room: np.ndarray  # (3,) >= 0
    c_flash: np.ndarray  # (3,) >= 0

    def __post_init__(self):
        self.c_room = np.asarray(self.c_room, dtype=np.float32).reshape(3).copy()
        self.c_flash = np.asarray(self.c_flash, dtype=np.float32).reshape(3).copy()
        for name, c in (("c_room", self.c_room), ("c_flash", self.c_flash)):
            if not np.isfinite(c).all() or (c < 0).any():
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass
class Frame:
    """One registered view: image, mask, camera, flash flag and optional face data.

    ``posmap`` maps the 256x256 face texture space to screen coordinates (x, y)
    of this view; texels outside the view carry far out-of-range coordinates.
    ``face_normals`` are world-space unit normals where ``face_mask`` > 0.5.
    """

    image: np.ndarray  # (H, W, 3) linear floats in [0, 1]
    mask: np.ndarray  # (H, W) floats in [0, 1]
    camera: Camera
    flash: bool
    posmap: Optional[np.ndarray] = None  # (256, 256, 2) screen coords
    face_normals: Optional[np.ndarray] = None  # (H, W, 3)
    face_mask: Optional[np.ndarray] = None  # (H, W)

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.float32)
        h, w = self.mask.shape
        if self.image.shape != (h, w, 3):
            raise ValueError("image and mask shapes disagree")
        if (h, w) != (self.camera.height, self.camera.width):
            raise ValueError("frame size does not match camera canvas")
        if not np.isfinite(self.image).all() or not np.isfinite(self.mask).all():
            raise ValueError("image and mask must be finite")
        if self.posmap is not None:
            self.posmap = np.ascontiguousarray(self.posmap, dtype=np.float32)
            if self.posmap.shape != (TEXTURE_SIZE, TEXTURE_SIZE, 2):
                raise ValueError("posmap must be (256, 256, 2)")
        if self.face_normals is not None:
            self.face_normals = np.ascontiguousarray(self.face_normals, dtype=np.float32)
            if self.face_normals.shape != (h, w, 3):
                raise ValueError("face_normals must match the image size")
            if self.face_mask is None:
                raise ValueError("face_normals require a face_mask")
            self.face_mask = np.ascontiguousarray(self.face_mask, dtype=np.float32)


@dataclass
class SceneModel:
    """Everything the renderer needs: geometry, descriptors, network, lights, texture."""

    cloud: PointCloud
    descriptors: DescriptorSet
    net_params: dict  # name -> float32 ndarray
    lights: LightColors
    albedo_halftex: np.ndarray  # (256, 128, 3) float32
    net_config: "object" = None  # NetConfig; typed loosely to avoid an import cycle
    trained_steps: int = 0

    def __post_init__(self):
        if self.descriptors.count != self.cloud.count:
            raise ValueError("descriptor rows must match point count")
        self.albedo_halftex = np.ascontiguousarray(self.albedo_halftex, dtype=np.float32)
        if self.albedo_halftex.shape != HALF_TEXTURE_SHAPE:
            raise ValueError(f"albedo half-texture must be {HALF_TEXTURE_SHAPE}")


def project_point(camera: Camera, p) -> tuple[float, float, float]:
    """Project one world point; returns (u, v, z_cam), even for z_cam <= 0."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    xc = camera.rotation @ p + camera.translation
    z = xc[2]
    return (camera.fx * xc[0] / z + camera.cx, camera.fy * xc[1] / z + camera.cy, z)


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points -> ((N, 2) uv, (N,) z_cam)."""
    xc = points @ camera.rotation.T + camera.translation
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * xc[:, 0] / z + camera.cx
        v = camera.fy * xc[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1), z


def flash_distance(camera: Camera, cloud: PointCloud) -> float:
    """Distance from the camera center to the closest cloud point."""
    if cloud.count < 1:
        raise ValueError("empty point cloud")
    d = np.linalg.norm(cloud.positions - camera.center, axis=1)
    return float(d.min())


def view_axis(camera: Camera) -> np.ndarray:
    """World-space forward axis of the camera (shared flash/view direction)."""
    return camera.rotation.T @ np.array([0.0, 0.0, 1.0])


def pixel_rays(camera: Camera) -> np.ndarray:
    """Unit world-space ray direction through every pixel center, (H, W, 3).

    Used instead of the constant ``view_axis`` when per-pixel flash rays are
    enabled for ablation.
    """
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    d = np.stack(
        [
            (xs - camera.cx) / camera.fx,
            (ys - camera.cy) / camera.fy,
            np.ones_like(xs, dtype=np.float64),
        ],
        axis=-1,
    )
    d = d @ camera.rotation  # (R^T @ d_cam^T)^T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def look_at_camera(
    position,
    target,
    fx: float,
    fy: float,
    width: int,
    height: int,
    up=(0.0, 1.0, 0.0),
    cx: Optional[float] = None,
    cy: Optional[float] = None,
) -> Camera:
    """Camera at ``position`` looking at ``target`` with +y_world kept upward."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the target")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    right = right / rnorm
    down = np.cross(forward, right)  # +y_cam points down so +y_world renders upward
    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ position
    if cx is None:
        cx = (width - 1) / 2.0
    if cy is None:
        cy = (height - 1) / 2.0
    return Camera(fx, fy, cx, cy, rotation, translation, width, height)
