"""Single render path shared by the CLI and the HTTP service.

Rasterize the descriptor pyramid for the requested camera, run the network,
apply the selected lighting mode, matte the background and encode. Keeping
offline and served rendering on this one function makes their outputs
byte-identical.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch

from . import lighting
from .images import encode_png, linear_to_srgb
from .lighting import (
    AdditionalPoint,
    DirectionalAmbient,
    LightingSpec,
    OriginalLighting,
    SphericalHarmonics,
)
from .network import RenderNet, load_net
from .rasterizer import pyramid_tensors
from .scene import Camera, SceneModel, flash_distance, view_axis

LIGHTING_MODES = ("original", "directional", "point", "sh")


def parse_lighting(spec: dict) -> LightingSpec:
    """Build a lighting spec from its JSON form (tagged by ``mode``)."""
    mode = spec.get("mode")
    if mode == "original":
        return OriginalLighting(flash=bool(spec.get("flash", False)))
    if mode == "directional":
        return DirectionalAmbient(
            direction=_normalized(spec["direction"]),
            ambient=float(spec.get("ambient", 0.5)),
            color=np.asarray(spec.get("color", [1.0, 1.0, 1.0]), dtype=np.float64),
        )
    if mode == "point":
        return AdditionalPoint(
            direction=_normalized(spec["direction"]),
            distance=float(spec["distance"]),
            color=np.asarray(spec.get("color", [1.0, 1.0, 1.0]), dtype=np.float64),
        )
    if mode == "sh":
        return SphericalHarmonics(coefficients=np.asarray(spec["coefficients"], dtype=np.float64))
    raise ValueError(f"unknown lighting mode {mode!r}")


def _normalized(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n < 1e-9:
        raise ValueError("light direction must be a nonzero vector")
    return v / n


def render_view(
    model: SceneModel,
    camera: Camera,
    spec: LightingSpec,
    matte_with_mask: bool = True,
    net: Optional[RenderNet] = None,
) -> np.ndarray:
    """Linear (H, W, 3) float image of the model under the requested lighting."""
    from .ops import pin_compute_threads

    pin_compute_threads()
    if net is None:
        net = load_net(model.net_params, model.net_config)
    desc = torch.from_numpy(model.descriptors.values)
    with torch.no_grad():
        pyramid = pyramid_tensors(model.cloud, desc, camera, model.net_config.levels - 1)
        heads = net(pyramid)
        if isinstance(spec, OriginalLighting):
            dist = flash_distance(camera, model.cloud) if spec.flash else 1.0
            image = lighting.compose_original(
                heads, model.lights, spec.flash, dist, view_axis(camera)
            )
        elif isinstance(spec, DirectionalAmbient):
            image = lighting.relight_directional(heads, spec.direction, spec.ambient, spec.color)
        elif isinstance(spec, AdditionalPoint):
            image = lighting.relight_additional_point(heads, model.lights, spec)
        elif isinstance(spec, SphericalHarmonics):
            image = lighting.relight_sh(heads, spec.coefficients)
        else:
            raise ValueError(f"unsupported lighting spec {type(spec).__name__}")
        image = image.clamp(0.0, 1.0)
        if matte_with_mask:
            image = image * (heads.mask > 0.5).unsqueeze(-1).to(image.dtype)
    return image.numpy()


def render_png(
    model: SceneModel,
    camera: Camera,
    spec: LightingSpec,
    matte_with_mask: bool = True,
    net: Optional[RenderNet] = None,
) -> bytes:
    """Deterministic 8-bit sRGB PNG of :func:`render_view`."""
    return encode_png(render_view(model, camera, spec, matte_with_mask, net))
