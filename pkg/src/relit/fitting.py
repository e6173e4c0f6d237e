"""Scene fitting: patch-sampled Adam over network, descriptors, lights, texture.

One view per step: sample a zoomed crop centered in the foreground, rasterize
the descriptor pyramid with the crop-adjusted camera, run the network,
compose the lit image and take one Adam step per parameter group. Everything
is deterministic given the seed, and checkpoints restore the exact state
(parameters, moments, RNG), so a resumed run is bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import json
import warnings
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
import torch

from . import lighting, losses
from .losses import LossReport, LossWeights
from .network import NetConfig, RenderNet, init_params, load_net, normalize_normals
from .ops import bilinear_sample, pin_compute_threads
from .rasterizer import pyramid_tensors
from .scene import (
    Camera,
    DescriptorSet,
    Frame,
    LightColors,
    PointCloud,
    SceneModel,
    TEXTURE_SIZE,
    flash_distance,
    pixel_rays,
    view_axis,
)


class FitDivergedError(RuntimeError):
    """Raised when a loss term goes non-finite; names the first bad term."""


@dataclass
class FitConfig:
    steps: int = 80_000
    patch: int = 512
    lr: float = 1e-4  # shared by network and descriptors
    lr_lights: float = 1e-2
    lr_tex: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    zoom: tuple = (0.8, 1.2)
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    net: NetConfig = field(default_factory=NetConfig)
    init_tex: str = "flash"  # or "nonflash"
    desc_init: str = "random"  # or "position": seed 3 channels with scaled coordinates
    desc_init_scale: float = 0.1
    z_near: float = 1e-4
    clamp_flash_cosine: bool = True
    per_pixel_rays: bool = False
    validation_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if min(self.lr, self.lr_lights, self.lr_tex) < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.init_tex not in ("flash", "nonflash"):
            raise ValueError("init_tex must be 'flash' or 'nonflash'")
        if self.desc_init not in ("random", "position"):
            raise ValueError("desc_init must be 'random' or 'position'")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.net, dict):
            self.net = NetConfig(**self.net)
        self.zoom = (float(self.zoom[0]), float(self.zoom[1]))

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "FitConfig":
        return cls(**json.loads(s))


@dataclass
class MedianTexture:
    """Per-texel median of face textures projected from a set of frames."""

    values: np.ndarray  # (256, 256, 3) float32, zero where no view contributed
    count: np.ndarray  # (256, 256) int32 contributing views

    @property
    def valid(self) -> np.ndarray:
        return self.count > 0


def median_texture(frames: list) -> MedianTexture:
    """Component-wise median over every frame whose posmap covers the texel."""
    stacks, valids = [], []
    for frame in frames:
        if frame.posmap is None:
            continue
        with torch.no_grad():
            sampled, valid = bilinear_sample(
                torch.from_numpy(frame.image), torch.from_numpy(frame.posmap)
            )
        stacks.append(sampled.numpy())
        valids.append(valid.numpy())
    if not stacks:
        raise ValueError("no frames with posmaps")
    vals = np.stack(stacks)  # (F, 256, 256, 3)
    ok = np.stack(valids)  # (F, 256, 256)
    vals = np.where(ok[..., None], vals, np.nan)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "All-NaN slice encountered")
        med = np.nanmedian(vals, axis=0)
    count = ok.sum(axis=0).astype(np.int32)
    med = np.where(count[..., None] > 0, med, 0.0)
    return MedianTexture(values=med.astype(np.float32), count=count)


def empty_median_texture() -> MedianTexture:
    return MedianTexture(
        values=np.zeros((TEXTURE_SIZE, TEXTURE_SIZE, 3), dtype=np.float32),
        count=np.zeros((TEXTURE_SIZE, TEXTURE_SIZE), dtype=np.int32),
    )


def init_half_texture(med: MedianTexture) -> np.ndarray:
    """Average the left half with the mirrored right half of the median texture.

    Texels covered on one side only copy that side; uncovered texels get 0.5.
    """
    half = TEXTURE_SIZE // 2
    left = med.values[:, :half]
    right = med.values[:, half:][:, ::-1]
    lc = (med.count[:, :half] > 0)[..., None]
    rc = (med.count[:, half:] > 0)[:, ::-1][..., None]
    both = lc & rc
    out = np.full((TEXTURE_SIZE, half, 3), 0.5, dtype=np.float32)
    out = np.where(lc & ~rc, left, out)
    out = np.where(rc & ~lc, right, out)
    out = np.where(both, 0.5 * (left + right), out)
    return out.astype(np.float32)


@dataclass
class PatchSample:
    image: np.ndarray  # (P, P, 3)
    mask: np.ndarray  # (P, P)
    camera: Camera
    posmap: Optional[np.ndarray]
    face_normals: Optional[np.ndarray]
    face_mask: Optional[np.ndarray]
    zoom: float
    window: tuple  # (ox, oy) in zoomed-canvas pixels


def sample_patch(frame: Frame, patch: int, zoom_range: tuple, rng: np.random.Generator) -> PatchSample:
    """Zoomed crop around a random foreground pixel, plus the matching camera.

    The returned camera reproduces the crop exactly: rasterizing with it
    equals cropping a full-frame rasterization at the zoomed resolution.
    """
    h, w = frame.mask.shape
    if patch > min(h, w):
        raise ValueError("patch larger than the frame")
    fg = np.flatnonzero(frame.mask.reshape(-1) > 0.5)
    if fg.size == 0:
        raise ValueError("frame has an empty foreground mask")

    zoom = float(rng.uniform(*zoom_range))
    zoom = max(zoom, patch / min(h, w))
    pick = int(rng.integers(fg.size))
    cy, cx = divmod(int(fg[pick]), w)

    ox = _window_offset(cx, zoom, w, patch)
    oy = _window_offset(cy, zoom, h, patch)

    cols = (np.arange(patch) + ox) / zoom
    rows = (np.arange(patch) + oy) / zoom
    xs, ys = np.meshgrid(cols, rows)
    coords = torch.from_numpy(np.stack([xs, ys], axis=-1).astype(np.float32))

    with torch.no_grad():
        img_p, valid = bilinear_sample(torch.from_numpy(frame.image), coords)
        mask_p, _ = bilinear_sample(torch.from_numpy(frame.mask), coords)
    image = img_p.numpy()
    mask = (mask_p.squeeze(-1) * valid.to(mask_p.dtype)).numpy()

    posmap = None
    if frame.posmap is not None:
        posmap = frame.posmap * zoom - np.array([ox, oy], dtype=np.float32)

    face_normals = face_mask = None
    if frame.face_normals is not None:
        with torch.no_grad():
            fn, _ = bilinear_sample(torch.from_numpy(frame.face_normals), coords)
            fm, _ = bilinear_sample(torch.from_numpy(frame.face_mask), coords)
            fm = (fm.squeeze(-1) > 0.999) & valid
            fn = normalize_normals(fn) * fm.unsqueeze(-1).to(fn.dtype)
        face_normals = fn.numpy()
        face_mask = fm.to(torch.float32).numpy()

    cam = Camera(
        fx=frame.camera.fx * zoom,
        fy=frame.camera.fy * zoom,
        cx=frame.camera.cx * zoom - ox,
        cy=frame.camera.cy * zoom - oy,
        rotation=frame.camera.rotation,
        translation=frame.camera.translation,
        width=patch,
        height=patch,
    )
    return PatchSample(image, mask, cam, posmap, face_normals, face_mask, zoom, (ox, oy))


def _window_offset(center: int, zoom: float, size: int, patch: int) -> int:
    hi = max(0, int(math.floor(zoom * (size - 1))) - patch + 1)
    o = int(round(zoom * center)) - patch // 2
    return min(max(o, 0), hi)


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    t: int = 0


def adam_step(
    param: torch.Tensor,
    grad: torch.Tensor,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    with torch.no_grad():
        state.m.mul_(beta1).add_(grad, alpha=1 - beta1)
        state.v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
        m_hat = state.m / (1 - beta1**state.t)
        v_hat = state.v / (1 - beta2**state.t)
        param.sub_(lr * m_hat / (v_hat.sqrt() + eps))


class Fitter:
    """Owns all learnable state for one scene and advances it step by step."""

    def __init__(self, frames: list, cloud: PointCloud, config: FitConfig):
        if not frames:
            raise ValueError("no training frames")
        pin_compute_threads()
        self.frames = frames
        self.cloud = cloud
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0
        self.reports: list = []

        self.flash_dist = [flash_distance(f.camera, cloud) for f in frames]
        for f, d in zip(frames, self.flash_dist):
            if f.flash and d <= 0:
                raise ValueError("a flash frame's camera coincides with the cloud")
        self.view_dirs = [view_axis(f.camera) for f in frames]

        self.net = load_net(init_params(config.net, config.seed), config.net)
        n = cloud.count
        desc0 = self.rng.normal(0.0, config.desc_init_scale, size=(n, config.net.descriptor_dim))
        if config.desc_init == "position":
            # geometric warm start: the first three channels carry standardized
            # point coordinates so shape-dependent maps have signal at step 0
            centered = cloud.positions - cloud.positions.mean(axis=0)
            centered /= max(float(centered.std(axis=0).mean()), 1e-9)
            desc0[:, :3] = 0.5 * centered
        self.desc = torch.from_numpy(desc0.astype(np.float32)).requires_grad_(True)

        posmapped = [f for f in frames if f.posmap is not None]
        flash_frames = [f for f in posmapped if f.flash]
        nonflash_frames = [f for f in posmapped if not f.flash]
        self.tf = median_texture(flash_frames) if flash_frames else empty_median_texture()
        if config.init_tex == "nonflash" and nonflash_frames:
            tex_src = median_texture(nonflash_frames)
        else:
            tex_src = self.tf
        self.tex = torch.from_numpy(init_half_texture(tex_src)).requires_grad_(True)
        self._tf_values = torch.from_numpy(self.tf.values)
        self._tf_valid = torch.from_numpy(self.tf.valid)

        flash_d = [d for f, d in zip(frames, self.flash_dist) if f.flash]
        mean_d2 = float(np.mean(flash_d)) ** 2 if flash_d else 1.0
        self.c_room = torch.full((3,), 0.5).requires_grad_(True)
        self.c_flash = torch.full((3,), 0.5 * mean_d2).requires_grad_(True)

        self._init_optimizer()

    def _init_optimizer(self):
        self.adam: dict = {}
        for name, p in self._named_params():
            self.adam[name] = AdamState(torch.zeros_like(p), torch.zeros_like(p))

    def _named_params(self):
        for pname, p in sorted(self.net.named_parameters()):
            yield f"net/{pname}", p
        yield "desc/values", self.desc
        yield "lights/c_room", self.c_room
        yield "lights/c_flash", self.c_flash
        yield "tex/albedo_half", self.tex

    def _group_lr(self, name: str) -> float:
        cfg = self.config
        if name.startswith("net/") or name.startswith("desc/"):
            return cfg.lr
        if name.startswith("lights/"):
            return cfg.lr_lights
        return cfg.lr_tex

    def step(self) -> LossReport:
        cfg = self.config
        idx = int(self.rng.integers(len(self.frames)))
        frame = self.frames[idx]
        patch = sample_patch(frame, min(cfg.patch, *frame.mask.shape), cfg.zoom, self.rng)

        pyramid = pyramid_tensors(self.cloud, self.desc, patch.camera, cfg.net.levels - 1, cfg.z_near)
        heads = self.net(pyramid)

        if cfg.per_pixel_rays:
            view_dir = torch.from_numpy(pixel_rays(patch.camera).astype(np.float32))
        else:
            view_dir = self.view_dirs[idx]
        rendered = lighting.compose(
            heads, self.c_room, self.c_flash, frame.flash, self.flash_dist[idx], view_dir,
            cfg.clamp_flash_cosine,
        )

        target = torch.from_numpy(patch.image)
        target_mask = torch.from_numpy(patch.mask)
        w = cfg.weights

        l_final = losses.loss_final(rendered, target, target_mask, w)
        l_mask = losses.loss_mask(heads.mask, target_mask)
        l_tv = losses.loss_tv(heads.shadow)
        if patch.posmap is not None:
            l_symm = losses.loss_symm(heads.albedo, patch.posmap, self.tex, w)
            l_cm = losses.loss_cm(heads.albedo, patch.posmap, self._tf_values, self._tf_valid)
        else:
            l_symm = rendered.new_zeros(())
            l_cm = rendered.new_zeros(())
        if patch.face_normals is not None:
            l_normal = losses.loss_normal(
                heads.normals, torch.from_numpy(patch.face_normals),
                torch.from_numpy(patch.face_mask), w,
            )
        else:
            l_normal = rendered.new_zeros(())

        total, report = losses.composite_loss(
            l_final, l_normal, l_symm, l_cm, l_tv, l_mask, w, step=self.step_count
        )
        for term, value in (
            ("final", report.final), ("normal", report.normal), ("symm", report.symm),
            ("cm", report.cm), ("tv", report.tv), ("mask", report.mask),
        ):
            if not math.isfinite(value):
                raise FitDivergedError(f"loss term '{term}' is non-finite at step {self.step_count}")

        total.backward()
        with torch.no_grad():
            for name, p in self._named_params():
                grad = p.grad if p.grad is not None else torch.zeros_like(p)
                adam_step(p, grad, self.adam[name], self._group_lr(name), cfg.beta1, cfg.beta2, cfg.eps)
                p.grad = None
            self.c_room.clamp_(min=0.0)
            self.c_flash.clamp_(min=0.0)

        self.step_count += 1
        self.reports.append(report)
        return report

    def run(
        self,
        n_steps: int,
        on_report: Optional[Callable[[LossReport], None]] = None,
        checkpoint_path=None,
    ) -> list:
        out = []
        for _ in range(n_steps):
            report = self.step()
            out.append(report)
            if on_report is not None:
                on_report(report)
            every = self.config.validation_every
            if checkpoint_path and every and self.step_count % every == 0:
                self.save_checkpoint(checkpoint_path)
        return out

    # -- state (de)hydration ------------------------------------------------

    def to_model(self) -> SceneModel:
        return SceneModel(
            cloud=self.cloud,
            descriptors=DescriptorSet(self.desc.detach().numpy().copy()),
            net_params={k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()},
            lights=LightColors(
                self.c_room.detach().numpy().copy(), self.c_flash.detach().numpy().copy()
            ),
            albedo_halftex=self.tex.detach().numpy().copy(),
            net_config=self.config.net,
            trained_steps=self.step_count,
        )

    def checkpoint_extras(self) -> dict:
        extras = {
            "fit/config": self.config.to_json().encode(),
            "fit/rng": json.dumps(_rng_state_to_jsonable(self.rng)).encode(),
            "fit/tf_values": self.tf.values,
            "fit/tf_count": self.tf.count,
        }
        for name, _ in self._named_params():
            st = self.adam[name]
            extras[f"opt/{name}/m"] = st.m.numpy()
            extras[f"opt/{name}/v"] = st.v.numpy()
            extras[f"opt/{name}/t"] = np.array([st.t], dtype=np.int64)
        return extras

    def save_checkpoint(self, path) -> None:
        from .container import save_scene

        save_scene(path, self.to_model(), extras=self.checkpoint_extras())

    @classmethod
    def from_checkpoint(cls, path, frames: list) -> "Fitter":
        from .container import load_scene

        model, extras = load_scene(path)
        config = FitConfig.from_json(extras["fit/config"].decode())
        pin_compute_threads()
        fitter = cls.__new__(cls)
        fitter.frames = frames
        fitter.cloud = model.cloud
        fitter.config = config
        fitter.rng = np.random.default_rng(config.seed)
        fitter.rng.bit_generator.state = _rng_state_from_jsonable(
            json.loads(extras["fit/rng"].decode())
        )
        fitter.step_count = model.trained_steps
        fitter.reports = []
        fitter.flash_dist = [flash_distance(f.camera, model.cloud) for f in frames]
        fitter.view_dirs = [view_axis(f.camera) for f in frames]
        fitter.net = load_net(model.net_params, config.net)
        fitter.desc = torch.from_numpy(model.descriptors.values.copy()).requires_grad_(True)
        fitter.tf = MedianTexture(
            values=extras["fit/tf_values"], count=extras["fit/tf_count"]
        )
        fitter._tf_values = torch.from_numpy(fitter.tf.values)
        fitter._tf_valid = torch.from_numpy(fitter.tf.valid)
        fitter.tex = torch.from_numpy(model.albedo_halftex.copy()).requires_grad_(True)
        fitter.c_room = torch.from_numpy(model.lights.c_room.copy()).requires_grad_(True)
        fitter.c_flash = torch.from_numpy(model.lights.c_flash.copy()).requires_grad_(True)
        fitter.adam = {}
        for name, p in fitter._named_params():
            fitter.adam[name] = AdamState(
                m=torch.from_numpy(extras[f"opt/{name}/m"].copy()),
                v=torch.from_numpy(extras[f"opt/{name}/v"].copy()),
                t=int(extras[f"opt/{name}/t"][0]),
            )
        return fitter


def _rng_state_to_jsonable(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=str))


def _rng_state_from_jsonable(d: dict) -> dict:
    out = dict(d)
    if "state" in out and isinstance(out["state"], dict):
        out["state"] = {k: int(v) for k, v in out["state"].items()}
    if "uinteger" in out:
        out["uinteger"] = int(out["uinteger"])
    return out
