"""Multi-resolution z-buffer rasterization of point descriptors.

Splats are a single pixel (nearest-pixel rounding); depth ties break toward
the lower point index so results are bit-reproducible. The forward pass is
pure numpy; :func:`gather_descriptors` re-expresses the descriptor lookup in
torch so gradients flow back to descriptor rows during fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .scene import Camera, DescriptorSet, PointCloud, project_points

Z_NEAR_DEFAULT = 1e-4


@dataclass
class RawImage:
    """One rasterized level: descriptor map, hit mask, winner depth and index."""

    data: np.ndarray  # (H, W, L) float32, zero where no hit
    hit: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float32, +inf where no hit
    winner: np.ndarray  # (H, W) int64 point index, -1 where no hit

    @property
    def shape(self) -> tuple[int, int]:
        return self.hit.shape


@dataclass
class RawImagePyramid:
    levels: list  # RawImage for t = 0..T

    def __len__(self) -> int:
        return len(self.levels)


def level_size(height: int, width: int, level: int) -> tuple[int, int]:
    s = 2**level
    return (-(-height // s), -(-width // s))  # ceil division


def rasterize_indices(
    cloud: PointCloud, camera: Camera, level: int = 0, z_near: float = Z_NEAR_DEFAULT
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Winner-point index, hit mask and depth for one pyramid level."""
    if level < 0:
        raise ValueError("level must be >= 0")
    h, w = level_size(camera.height, camera.width, level)
    scale = 2.0**-level
    cam = camera.scaled(scale, w, h)
    uv, z = project_points(cam, cloud.positions)

    px = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    py = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    valid = (z > z_near) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
    valid &= np.isfinite(uv).all(axis=1)

    winner = np.full((h, w), -1, dtype=np.int64)
    depth = np.full((h, w), np.inf, dtype=np.float32)
    idx = np.flatnonzero(valid)
    if idx.size:
        pix = py[idx] * w + px[idx]
        # sort by (pixel, depth, point index); first entry per pixel wins
        order = np.lexsort((idx, z[idx], pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win_pix = pix_sorted[first]
        win_idx = idx[order][first]
        winner.reshape(-1)[win_pix] = win_idx
        depth.reshape(-1)[win_pix] = z[win_idx].astype(np.float32)
    hit = winner >= 0
    return winner, hit, depth


def rasterize(
    cloud: PointCloud,
    desc: DescriptorSet,
    camera: Camera,
    level: int = 0,
    z_near: float = Z_NEAR_DEFAULT,
) -> RawImage:
    """Z-buffer the cloud onto the camera canvas at the given pyramid level."""
    if desc.count != cloud.count:
        raise ValueError("descriptor rows must match point count")
    winner, hit, depth = rasterize_indices(cloud, camera, level, z_near)
    data = np.zeros((*hit.shape, desc.width), dtype=np.float32)
    if hit.any():
        data[hit] = desc.values[winner[hit]]
    return RawImage(data=data, hit=hit, depth=depth, winner=winner)


def build_pyramid(
    cloud: PointCloud,
    desc: DescriptorSet,
    camera: Camera,
    levels: int,
    z_near: float = Z_NEAR_DEFAULT,
) -> RawImagePyramid:
    """Raw images for levels 0..levels, each an independent rasterization."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    return RawImagePyramid(
        [rasterize(cloud, desc, camera, t, z_near) for t in range(levels + 1)]
    )


def backward_rasterize(raw_grad: np.ndarray, raw: RawImage) -> np.ndarray:
    """Push a gradient on the raw image back to descriptor rows.

    Each hit pixel contributes its upstream gradient to the winning point's
    row; contributions over pixels sum.
    """
    if raw_grad.shape[:2] != raw.hit.shape:
        raise ValueError("gradient spatial shape does not match the raw image")
    n_points = int(raw.winner.max()) + 1 if raw.hit.any() else 0
    grads = np.zeros((n_points, raw_grad.shape[2]), dtype=np.float64)
    if raw.hit.any():
        np.add.at(grads, raw.winner[raw.hit], raw_grad[raw.hit])
    return grads


def gather_descriptors(
    desc: torch.Tensor, winner: np.ndarray, hit: np.ndarray
) -> torch.Tensor:
    """Differentiable (H, W, L) raw image from a torch descriptor matrix.

    The gather mirrors :func:`rasterize`; autograd scatters upstream pixel
    gradients back onto the winning rows, matching :func:`backward_rasterize`.
    """
    h, w = hit.shape
    idx = torch.from_numpy(np.where(hit, winner, 0).reshape(-1))
    raw = desc.index_select(0, idx).reshape(h, w, desc.shape[1])
    mask = torch.from_numpy(hit.astype(np.float32)).unsqueeze(-1).to(desc.dtype)
    return raw * mask


def pyramid_tensors(
    cloud: PointCloud,
    desc: torch.Tensor,
    camera: Camera,
    levels: int,
    z_near: float = Z_NEAR_DEFAULT,
) -> list:
    """Differentiable pyramid: list of (H_t, W_t, L) tensors tied to ``desc``."""
    out = []
    for t in range(levels + 1):
        winner, hit, _ = rasterize_indices(cloud, camera, t, z_near)
        out.append(gather_descriptors(desc, winner, hit))
    return out
