"""Closed-form lighting: training-image composition and the relighting modes.

The composition model is

    I = A * C_room * S  +  F * A * (C_flash / d^2) * max(<N, -w_o>, 0)

with world-space unit normals N, the per-view flash distance d and the
camera forward axis w_o. Relighting swaps the flash term for a directional,
point or spherical-harmonics light while optionally keeping the fitted room
term.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Union

import numpy as np
import torch

from .network import HeadMaps
from .scene import LightColors

# Irradiance quadratic-form constants for order-2 spherical harmonics
# (published truncated values; the matrix contract is pinned to these).
C1, C2, C3, C4, C5 = 0.429043, 0.511664, 0.743125, 0.886227, 0.247708

# Real SH basis scale factors, bands l <= 2, order (0,0), (1,-1), (1,0), (1,1),
# (2,-2), (2,-1), (2,0), (2,1), (2,2). Exact, so projection obeys orthonormality.
_Y00 = 0.5 / math.sqrt(math.pi)
_Y1 = math.sqrt(3.0 / (4.0 * math.pi))
_Y2A = math.sqrt(15.0 / (4.0 * math.pi))
_Y20 = math.sqrt(5.0 / (16.0 * math.pi))
_Y22 = math.sqrt(15.0 / (16.0 * math.pi))

SH_COEFF_COUNT = 27


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
        raise ValueError(f"{name} must be unit length (norm {n:.3g})")
    return v


@dataclass(frozen=True)
class OriginalLighting:
    """The captured room light, with or without the co-located flash."""

    flash: bool = False


@dataclass(frozen=True)
class DirectionalAmbient:
    """Directional light plus flat ambient; drops the fitted room term."""

    direction: np.ndarray  # unit, direction the light travels
    ambient: float
    color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction, "direction"))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")


@dataclass(frozen=True)
class AdditionalPoint:
    """A new point light added on top of the fitted room lighting."""

    direction: np.ndarray  # unit, direction the light travels
    distance: float
    color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction, "direction"))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if self.distance <= 0:
            raise ValueError("light distance must be positive")


@dataclass(frozen=True)
class SphericalHarmonics:
    """Order-2 environment lighting, 9 coefficients per RGB channel."""

    coefficients: np.ndarray  # (27,) row-major per channel, R first

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if c.shape[0] != SH_COEFF_COUNT:
            raise ValueError(f"expected {SH_COEFF_COUNT} coefficients, got {c.shape[0]}")
        if not np.isfinite(c).all():
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", c)


LightingSpec = Union[OriginalLighting, DirectionalAmbient, AdditionalPoint, SphericalHarmonics]


def _flash_cosine(normals: torch.Tensor, direction, clamp: bool = True) -> torch.Tensor:
    """Pixel-wise <N, -w> for a constant (3,) or per-pixel (H, W, 3) direction."""
    if torch.is_tensor(direction):
        d = direction.to(normals.dtype)
    else:
        d = normals.new_tensor(np.asarray(direction, dtype=np.float64))
    cos = -(normals * d).sum(-1)
    return cos.clamp_min(0.0) if clamp else cos


def compose(
    heads: HeadMaps,
    c_room,
    c_flash,
    flash: bool,
    distance: float,
    view_dir,
    clamp_cosine: bool = True,
) -> torch.Tensor:
    """Composition with raw light-color tensors (gradients flow through them)."""
    image = heads.albedo * _to_tensor(c_room, heads.albedo) * heads.shadow.unsqueeze(-1)
    if flash:
        if distance <= 0:
            raise ValueError("flash distance must be positive")
        cos = _flash_cosine(heads.normals, view_dir, clamp_cosine)
        scale = _to_tensor(c_flash, heads.albedo) / distance**2
        image = image + heads.albedo * scale * cos.unsqueeze(-1)
    return image


def compose_original(
    heads: HeadMaps,
    lights: LightColors,
    flash: bool,
    distance: float,
    view_dir,
    clamp_cosine: bool = True,
) -> torch.Tensor:
    """Training-image composition; differentiable in the head maps."""
    return compose(heads, lights.c_room, lights.c_flash, flash, distance, view_dir, clamp_cosine)


def relight_directional(heads: HeadMaps, direction, ambient: float, color) -> torch.Tensor:
    """I' = color * A * (ambient + (1 - ambient) * max(<N, -w>, 0))."""
    cos = _flash_cosine(heads.normals, direction)
    shading = ambient + (1.0 - ambient) * cos
    return heads.albedo * _to_tensor(color, heads.albedo) * shading.unsqueeze(-1)


def relight_additional_point(heads: HeadMaps, lights: LightColors, spec: AdditionalPoint) -> torch.Tensor:
    """Fitted room term plus a new inverse-square point light."""
    c_room = _to_tensor(lights.c_room, heads.albedo)
    cos = _flash_cosine(heads.normals, spec.direction)
    point = _to_tensor(spec.color, heads.albedo) / spec.distance**2
    return heads.albedo * (c_room * heads.shadow.unsqueeze(-1) + point * cos.unsqueeze(-1))


def sh_matrix(coefficients) -> np.ndarray:
    """Per-channel 4x4 irradiance matrices, linear in the 27 coefficients."""
    c = np.asarray(coefficients, dtype=np.float64).reshape(-1)
    if c.shape[0] != SH_COEFF_COUNT:
        raise ValueError(f"expected {SH_COEFF_COUNT} coefficients, got {c.shape[0]}")
    out = np.zeros((3, 4, 4))
    for ch in range(3):
        l00, l1m1, l10, l11, l2m2, l2m1, l20, l21, l22 = c[9 * ch : 9 * ch + 9]
        out[ch] = [
            [C1 * l22, C1 * l2m2, C1 * l21, C2 * l11],
            [C1 * l2m2, -C1 * l22, C1 * l2m1, C2 * l1m1],
            [C1 * l21, C1 * l2m1, C3 * l20, C2 * l10],
            [C2 * l11, C2 * l1m1, C2 * l10, C4 * l00 - C5 * l20],
        ]
    return out


def sh_irradiance(normals, matrices: np.ndarray):
    """Quadratic form [n 1]^T M [n 1] per channel; accepts torch or numpy normals."""
    if torch.is_tensor(normals):
        ones = torch.ones_like(normals[..., :1])
        h = torch.cat([normals, ones], dim=-1)
        m = normals.new_tensor(matrices)
        return torch.einsum("...i,cij,...j->...c", h, m, h)
    h = np.concatenate([normals, np.ones_like(normals[..., :1])], axis=-1)
    return np.einsum("...i,cij,...j->...c", h, matrices, h)


def relight_sh(heads: HeadMaps, coefficients) -> torch.Tensor:
    """Albedo times the SH irradiance quadratic form, clamped at zero."""
    m = sh_matrix(coefficients)
    irr = sh_irradiance(heads.normals, m).clamp_min(0.0)
    return heads.albedo * irr


def sh_basis(directions: np.ndarray) -> np.ndarray:
    """Real SH basis values for bands l <= 2 at unit directions (..., 3) -> (..., 9)."""
    x, y, z = directions[..., 0], directions[..., 1], directions[..., 2]
    return np.stack(
        [
            np.full_like(x, _Y00),
            _Y1 * y,
            _Y1 * z,
            _Y1 * x,
            _Y2A * x * y,
            _Y2A * y * z,
            _Y20 * (3 * z * z - 1),
            _Y2A * x * z,
            _Y22 * (x * x - y * y),
        ],
        axis=-1,
    )


def sphere_quadrature(n_polar: int = 32, n_azimuth: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre x uniform-azimuth nodes and solid-angle weights on S^2."""
    u, wu = np.polynomial.legendre.leggauss(n_polar)  # u = cos(theta)
    phi = (np.arange(n_azimuth) + 0.5) * (2 * np.pi / n_azimuth)
    uu, pp = np.meshgrid(u, phi, indexing="ij")
    s = np.sqrt(np.clip(1 - uu**2, 0, None))
    dirs = np.stack([s * np.cos(pp), s * np.sin(pp), uu], axis=-1).reshape(-1, 3)
    w = np.broadcast_to(wu[:, None] * (2 * np.pi / n_azimuth), uu.shape).reshape(-1)
    return dirs, w


def project_env_to_sh(radiance, n_polar: int = 32, n_azimuth: int = 64) -> np.ndarray:
    """Project spherical radiance onto the l <= 2 SH basis; returns 27 floats.

    ``radiance`` is either a callable mapping (M, 3) unit directions to
    (M, 3) RGB values, or an equirectangular (H, W, 3) grid with rows spanning
    polar angle 0..pi (+z to -z) and columns azimuth 0..2pi around +z.
    """
    if callable(radiance):
        dirs, w = sphere_quadrature(n_polar, n_azimuth)
        vals = np.asarray(radiance(dirs), dtype=np.float64).reshape(len(dirs), 3)
    else:
        grid = np.asarray(radiance, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[2] != 3:
            raise ValueError("panorama grid must be (H, W, 3)")
        h, w_ = grid.shape[:2]
        theta = (np.arange(h) + 0.5) * (np.pi / h)
        phi = (np.arange(w_) + 0.5) * (2 * np.pi / w_)
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        dirs = np.stack(
            [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
        ).reshape(-1, 3)
        w = (np.sin(tt) * (np.pi / h) * (2 * np.pi / w_)).reshape(-1)
        vals = grid.reshape(-1, 3)
    if not np.isfinite(vals).all():
        raise ValueError("radiance samples must be finite")
    basis = sh_basis(dirs)  # (M, 9)
    coeffs = np.einsum("m,mk,mc->ck", w, basis, vals)  # (3, 9)
    return coeffs.reshape(-1)


def sh_coefficients_for_directional(direction, color=(1.0, 1.0, 1.0)) -> np.ndarray:
    """SH projection of a delta directional light arriving from ``direction``.

    ``direction`` points from the surface toward the source.
    """
    d = _unit(direction, "direction")
    basis = sh_basis(d[None, :])[0]  # (9,)
    color = np.asarray(color, dtype=np.float64).reshape(3)
    return (color[:, None] * basis[None, :]).reshape(-1)


def _to_tensor(v, like: torch.Tensor) -> torch.Tensor:
    if torch.is_tensor(v):
        return v.to(like.dtype)
    return like.new_tensor(np.asarray(v, dtype=np.float64))
