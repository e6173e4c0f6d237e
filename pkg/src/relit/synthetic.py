"""Synthetic ground-truth scene: analytic surface, exact maps, oracle renders.

A sphere (optionally bumped) with a left-right symmetric albedo pattern and
a deliberately asymmetric smooth room-shading field. Frames are rendered by
per-pixel ray casting of the closed-form lighting model, so every rendered
image comes with exact albedo/normal/shadow/mask maps, an analytic face
chart (posmap) and face normals. The head faces -z; cameras orbit on the -z
half-circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import lighting
from .network import HeadMaps, NetConfig, RenderNet, load_net
from .rasterizer import pyramid_tensors
from .scene import (
    Camera,
    Frame,
    LightColors,
    PointCloud,
    TEXTURE_SIZE,
    flash_distance,
    look_at_camera,
    view_axis,
)

FRONT = np.array([0.0, 0.0, -1.0])
CHART_SCALE = 0.68
FACE_CAP_COS = math.cos(math.radians(55.0))
POSMAP_INVALID = -1.0e6


@dataclass
class SyntheticScene:
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    bump_amp: float = 0.0
    c_room: np.ndarray = field(default_factory=lambda: np.array([0.80, 0.74, 0.66]))
    c_flash: np.ndarray = field(default_factory=lambda: np.array([3.1, 3.2, 3.6]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 <= self.bump_amp < 0.5:
            raise ValueError("bump amplitude must lie in [0, 0.5)")

    # -- geometry ---------------------------------------------------------

    def _bump(self, dirs: np.ndarray) -> np.ndarray:
        az = np.arctan2(dirs[..., 0], -dirs[..., 2])
        pol = np.arccos(np.clip(dirs[..., 1], -1.0, 1.0))
        return np.sin(3 * pol) * np.cos(4 * az) * np.sin(pol)

    def surface_radius(self, dirs: np.ndarray) -> np.ndarray:
        return self.radius * (1.0 + self.bump_amp * self._bump(dirs))

    @property
    def max_radius(self) -> float:
        return self.radius * (1.0 + self.bump_amp)

    def surface_points(self, dirs: np.ndarray) -> np.ndarray:
        return self.center + dirs * self.surface_radius(dirs)[..., None]

    def normals(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.center
        if self.bump_amp == 0.0:
            return rel / np.linalg.norm(rel, axis=-1, keepdims=True)
        # numerical gradient of the implicit field |x-c| - r(dir(x-c))
        h = 1e-6 * self.radius
        grad = np.empty_like(rel)
        for k in range(3):
            off = np.zeros(3)
            off[k] = h
            grad[..., k] = self._field(points + off) - self._field(points - off)
        return grad / np.linalg.norm(grad, axis=-1, keepdims=True)

    def _field(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.center
        dist = np.linalg.norm(rel, axis=-1)
        dirs = rel / np.maximum(dist[..., None], 1e-12)
        return dist - self.surface_radius(dirs)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First surface hit along each ray: (t, hit). Rays are (..., 3) unit."""
        rel = origins - self.center
        b = (dirs * rel).sum(-1)
        c = (rel * rel).sum(-1) - self.max_radius**2
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.clip(disc, 0, None))
        t = -b - sq
        hit = hit & (t > 0)
        if self.bump_amp == 0.0:
            return np.where(hit, t, np.inf), hit
        # bisection between entry into the bounding sphere and the far root
        t_lo = np.where(hit, t, 0.0)
        t_hi = np.where(hit, -b + sq, 0.0)
        f_lo = self._field(origins + dirs * t_lo[..., None])
        inside = f_lo <= 0
        t_hi = np.where(inside, t_lo, t_hi)
        t_lo = np.where(inside, np.maximum(t_lo - 0.1 * self.radius, 0.0), t_lo)
        for _ in range(80):
            mid = 0.5 * (t_lo + t_hi)
            f_mid = self._field(origins + dirs * mid[..., None])
            go_low = f_mid > 0
            t_lo = np.where(go_low, mid, t_lo)
            t_hi = np.where(go_low, t_hi, mid)
        t_fin = 0.5 * (t_lo + t_hi)
        hit = hit & (np.abs(self._field(origins + dirs * t_fin[..., None])) < 1e-6)
        return np.where(hit, t_fin, np.inf), hit

    def closest_distance(self, position: np.ndarray) -> float:
        return float(np.linalg.norm(position - self.center) - self.max_radius)

    # -- appearance -------------------------------------------------------

    def albedo(self, points: np.ndarray) -> np.ndarray:
        """Left-right symmetric checker-plus-gradient reflectance, (..., 3) in (0, 1)."""
        d = self._dirs(points)
        az = np.arctan2(d[..., 0], -d[..., 2])
        pol = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
        checker = 0.5 * (1.0 + np.tanh(3.0 * np.cos(3 * az) * np.sin(4 * pol)))
        g = 0.5 * (d[..., 1] + 1.0)
        h = np.abs(d[..., 0])
        return np.stack(
            [
                0.20 + 0.50 * checker + 0.15 * g,
                0.15 + 0.40 * checker + 0.25 * g,
                0.25 + 0.30 * checker + 0.30 * h,
            ],
            axis=-1,
        )

    def shading(self, points: np.ndarray) -> np.ndarray:
        """Smooth asymmetric room-shading field in (0, 1)."""
        d = self._dirs(points)
        az = np.arctan2(d[..., 0], -d[..., 2])
        pol = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
        lamp = np.array([0.45, 0.55, -0.70])
        lamp /= np.linalg.norm(lamp)
        return (
            0.30
            + 0.40 * (0.5 + 0.5 * (d * lamp).sum(-1))
            + 0.12 * np.sin(2 * az + 0.8) * np.sin(pol)
        )

    def _dirs(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.center
        return rel / np.maximum(np.linalg.norm(rel, axis=-1, keepdims=True), 1e-12)


@dataclass
class OracleMaps:
    """Exact per-view ground truth emitted next to each rendered frame."""

    albedo: np.ndarray  # (H, W, 3)
    normals: np.ndarray  # (H, W, 3)
    shadow: np.ndarray  # (H, W)
    mask: np.ndarray  # (H, W)

    def as_heads(self) -> HeadMaps:
        return HeadMaps(
            albedo=torch.from_numpy(self.albedo),
            normals=torch.from_numpy(self.normals),
            shadow=torch.from_numpy(self.shadow),
            mask=torch.from_numpy(self.mask),
        )


@dataclass
class SyntheticDataset:
    scene: Optional[SyntheticScene]
    frames: list
    gt_maps: list
    val_indices: list
    cloud: Optional[PointCloud] = None

    @property
    def train_indices(self) -> list:
        val = set(self.val_indices)
        return [i for i in range(len(self.frames)) if i not in val]

    def split(self, name: str) -> list:
        if name == "val":
            return list(self.val_indices)
        if name == "train":
            return self.train_indices
        if name == "all":
            return list(range(len(self.frames)))
        raise ValueError(f"unknown split {name!r}")


def generate_scene(seed: int, n_points: int = 50_000, **scene_kwargs) -> tuple[SyntheticScene, PointCloud]:
    """Scene plus a point cloud sampled uniformly over the surface."""
    scene = SyntheticScene(**scene_kwargs)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return scene, PointCloud(scene.surface_points(dirs))


def chart_directions() -> np.ndarray:
    """Unit directions of the 256x256 face chart; columns mirror across x = 0."""
    ab = (np.arange(TEXTURE_SIZE) + 0.5) / TEXTURE_SIZE * 2.0 - 1.0
    bb, aa = np.meshgrid(ab, ab, indexing="ij")  # bb: rows (top -1), aa: cols
    x = aa * CHART_SCALE
    y = -bb * CHART_SCALE
    z = -np.sqrt(np.clip(1.0 - x * x - y * y, 0.0, None))
    return np.stack([x, y, z], axis=-1)


def render_oracle(scene: SyntheticScene, camera: Camera, flash: bool) -> tuple[Frame, OracleMaps]:
    """Ray-cast one view of the analytic scene with exact ground-truth maps."""
    origin = camera.center
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    d_cam = np.stack(
        [
            (xs - camera.cx) / camera.fx,
            (ys - camera.cy) / camera.fy,
            np.ones_like(xs, dtype=np.float64),
        ],
        axis=-1,
    )
    d_world = d_cam @ camera.rotation
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)

    t, hit = scene.intersect(np.broadcast_to(origin, d_world.shape), d_world)
    points = origin + d_world * np.where(hit, t, 0.0)[..., None]

    albedo = np.where(hit[..., None], scene.albedo(points), 0.0)
    normals = np.where(hit[..., None], scene.normals(points), 0.0)
    shadow = np.where(hit, scene.shading(points), 0.0)
    mask = hit.astype(np.float64)

    image = albedo * scene.c_room * shadow[..., None]
    if flash:
        dist = scene.closest_distance(origin)
        cos = np.clip(-(normals * view_axis(camera)).sum(-1), 0.0, None)
        image = image + albedo * (scene.c_flash / dist**2) * cos[..., None]

    frame = Frame(
        image=image.astype(np.float32),
        mask=mask.astype(np.float32),
        camera=camera,
        flash=flash,
        posmap=_chart_posmap(scene, camera),
        face_normals=_face_normals(scene, points, normals, hit),
        face_mask=_face_mask(scene, points, hit),
    )
    maps = OracleMaps(
        albedo=albedo.astype(np.float32),
        normals=normals.astype(np.float32),
        shadow=shadow.astype(np.float32),
        mask=mask.astype(np.float32),
    )
    return frame, maps


def _chart_posmap(scene: SyntheticScene, camera: Camera) -> np.ndarray:
    dirs = chart_directions()
    points = scene.surface_points(dirs)
    normals = scene.normals(points)
    to_cam = camera.center - points
    facing = (normals * to_cam).sum(-1) > 0

    from .scene import project_points

    uv, z = project_points(camera, points.reshape(-1, 3))
    uv = uv.reshape(TEXTURE_SIZE, TEXTURE_SIZE, 2)
    z = z.reshape(TEXTURE_SIZE, TEXTURE_SIZE)
    inside = (
        (z > 0)
        & (uv[..., 0] >= 0)
        & (uv[..., 0] <= camera.width - 1)
        & (uv[..., 1] >= 0)
        & (uv[..., 1] <= camera.height - 1)
    )
    valid = facing & inside
    posmap = np.where(valid[..., None], uv, POSMAP_INVALID)
    return posmap.astype(np.float32)


def _face_cap(scene: SyntheticScene, points: np.ndarray, hit: np.ndarray) -> np.ndarray:
    dirs = scene._dirs(points)
    return hit & ((dirs * FRONT).sum(-1) >= FACE_CAP_COS)


def _face_mask(scene, points, hit) -> np.ndarray:
    return _face_cap(scene, points, hit).astype(np.float32)


def _face_normals(scene, points, normals, hit) -> np.ndarray:
    cap = _face_cap(scene, points, hit)
    return np.where(cap[..., None], normals, 0.0).astype(np.float32)


def make_dataset(
    scene: SyntheticScene,
    n_views: int = 100,
    flash_every: int = 5,
    image_size: int = 256,
    orbit_radius: float = 4.0,
    silhouette_fill: float = 0.36,
    cloud: Optional[PointCloud] = None,
) -> SyntheticDataset:
    """Half-circle capture: every ``flash_every``-th view gets the flash.

    Validation marks every other flash view plus its two neighbors, mirroring
    the synthetic capture protocol (30 held-out frames for 100 views).
    """
    if n_views < 2:
        raise ValueError("need at least two viewpoints")
    if orbit_radius <= scene.max_radius:
        raise ValueError("camera orbit must be outside the surface")
    half_angle = math.asin(scene.max_radius / orbit_radius)
    focal = silhouette_fill * image_size / math.tan(half_angle)

    frames, gt_maps = [], []
    for k in range(n_views):
        psi = -math.pi / 2 + math.pi * k / (n_views - 1)
        pos = scene.center + orbit_radius * np.array([math.sin(psi), 0.0, -math.cos(psi)])
        cam = look_at_camera(pos, scene.center, focal, focal, image_size, image_size)
        frame, maps = render_oracle(scene, cam, flash=(k % flash_every == 0))
        frames.append(frame)
        gt_maps.append(maps)

    val = set()
    for j in range(1, n_views // flash_every + 1, 2):
        c = j * flash_every
        if c + 1 <= n_views - 1:
            val.update((c - 1, c, c + 1))
    return SyntheticDataset(
        scene=scene, frames=frames, gt_maps=gt_maps, val_indices=sorted(val), cloud=cloud
    )


# -- metrics ---------------------------------------------------------------


def model_heads(model, frame: Frame, net: Optional[RenderNet] = None) -> HeadMaps:
    """Run the fitted pipeline on one frame's camera (no gradients)."""
    if net is None:
        net = load_net(model.net_params, model.net_config)
    desc = torch.from_numpy(model.descriptors.values)
    pyramid = pyramid_tensors(model.cloud, desc, frame.camera, model.net_config.levels - 1)
    with torch.no_grad():
        return net(pyramid)


def evaluate(model, dataset: SyntheticDataset, split: str = "val") -> dict:
    """Held-out metrics: relit PSNR, albedo correlation, normal MAE, mask IoU."""
    indices = dataset.split(split)
    if not indices:
        raise ValueError(f"split {split!r} is empty")
    net = load_net(model.net_params, model.net_config)
    lights = LightColors(model.lights.c_room, model.lights.c_flash)
    heads = [model_heads(model, dataset.frames[i], net) for i in indices]
    return evaluate_heads(heads, lights, dataset, indices, cloud=model.cloud)


def evaluate_heads(heads_list, lights: LightColors, dataset: SyntheticDataset, indices, cloud: Optional[PointCloud] = None) -> dict:
    """Metrics for externally supplied head maps (shared by self-checks)."""
    if len(heads_list) != len(indices):
        raise ValueError("one head set per evaluated frame required")
    sq_err_sum = 0.0
    n_px = 0
    pred_alb, gt_alb = [], []
    ang_sum = 0.0
    inter = union = 0

    for heads, i in zip(heads_list, indices):
        frame = dataset.frames[i]
        gt = dataset.gt_maps[i]
        if cloud is not None:
            dist = flash_distance(frame.camera, cloud)
        elif dataset.scene is not None:
            dist = dataset.scene.closest_distance(frame.camera.center)
        else:
            raise ValueError("need a point cloud or the analytic scene for flash distances")
        with torch.no_grad():
            rendered = lighting.compose_original(
                heads, lights, frame.flash, dist, view_axis(frame.camera)
            )
        rendered = rendered.clamp(0.0, 1.0).numpy()

        fg = gt.mask > 0.5
        sq_err_sum += float(((rendered - frame.image)[fg] ** 2).sum())
        n_px += int(fg.sum()) * 3

        pred_alb.append(heads.albedo.numpy()[fg])
        gt_alb.append(gt.albedo[fg])

        n_pred = heads.normals.numpy()[fg]
        dots = np.clip((n_pred * gt.normals[fg]).sum(-1), -1.0, 1.0)
        ang_sum += float(np.degrees(np.arccos(dots)).sum())

        mp = heads.mask.numpy() > 0.5
        mg = gt.mask > 0.5
        inter += int((mp & mg).sum())
        union += int((mp | mg).sum())

    n_fg = sum(len(a) for a in gt_alb)
    mse = sq_err_sum / max(n_px, 1)
    psnr = float("inf") if mse == 0 else -10.0 * math.log10(mse)

    pred = np.concatenate(pred_alb, axis=0)
    gt_a = np.concatenate(gt_alb, axis=0)
    scaled = np.empty_like(pred)
    for c in range(3):
        denom = float((pred[:, c] ** 2).sum())
        k = float((pred[:, c] * gt_a[:, c]).sum()) / denom if denom > 0 else 0.0
        scaled[:, c] = k * pred[:, c]
    # center per channel so channel means (pure color temperature) do not
    # masquerade as structure, then correlate jointly across channels
    scaled = scaled - scaled.mean(axis=0)
    gt_c = gt_a - gt_a.mean(axis=0)
    corr = _pearson_raw(scaled.reshape(-1), gt_c.reshape(-1))

    return {
        "psnr_relit": psnr,
        "albedo_corr": corr,
        "normal_mae_deg": ang_sum / max(n_fg, 1),
        "mask_iou": inter / union if union else 1.0,
    }


def _pearson_raw(a: np.ndarray, b: np.ndarray) -> float:
    denom = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    return float((a * b).sum()) / denom if denom > 0 else 0.0
