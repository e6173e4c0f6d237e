"""Relightable point-based portrait rendering.

Fits a scene model (per-point descriptors, a small rendering network, global
light colors and an albedo half-texture) to a registered flash/no-flash
image sequence, then renders novel viewpoints under novel lighting.
"""

from .scene import (
    Camera,
    DescriptorSet,
    Frame,
    LightColors,
    PointCloud,
    SceneModel,
    flash_distance,
    look_at_camera,
    project_point,
    view_axis,
)
from .rasterizer import RawImage, RawImagePyramid, backward_rasterize, build_pyramid, rasterize
from .network import HeadMaps, NetConfig, RenderNet, init_params
from .lighting import (
    AdditionalPoint,
    DirectionalAmbient,
    OriginalLighting,
    SphericalHarmonics,
    compose_original,
    project_env_to_sh,
    relight_additional_point,
    relight_directional,
    relight_sh,
    sh_matrix,
)
from .losses import LossReport, LossWeights, mismatch
from .fitting import FitConfig, Fitter, MedianTexture, adam_step, init_half_texture, median_texture, sample_patch
from .synthetic import SyntheticDataset, SyntheticScene, evaluate, generate_scene, make_dataset, render_oracle
from .container import load_scene, save_scene
from .render import parse_lighting, render_png, render_view

__version__ = "0.1.0"
