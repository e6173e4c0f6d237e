"""Rendering network: raw descriptor pyramid in, albedo/normal/shadow/mask out.

A small U-Net built from gated convolutions. Each pyramid level is
concatenated to the encoder stage of its resolution; the decoder upsamples
with nearest-neighbor interpolation and skip connections. The final
eight-channel layer splits into sigmoid albedo (3), L2-normalized world-space
normals (3), sigmoid shadow (1) and sigmoid mask (1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

NORMAL_FALLBACK = (0.0, 0.0, -1.0)
_NORM_EPS = 1e-8


@dataclass
class NetConfig:
    base_channels: int = 16
    depth: int = 4  # encoder levels
    levels: int = 4  # pyramid levels consumed (T + 1)
    descriptor_dim: int = 8
    max_channel_mult: int = 8

    def __post_init__(self):
        if self.depth < self.levels:
            raise ValueError("network depth must cover every pyramid level")
        if min(self.base_channels, self.depth, self.levels, self.descriptor_dim) < 1:
            raise ValueError("all network dimensions must be positive")

    def stage_channels(self, i: int) -> int:
        return self.base_channels * min(2**i, self.max_channel_mult)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "depth": self.depth,
            "levels": self.levels,
            "descriptor_dim": self.descriptor_dim,
            "max_channel_mult": self.max_channel_mult,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass
class HeadMaps:
    """Per-view maps predicted by the network (channel-last torch tensors)."""

    albedo: torch.Tensor  # (H, W, 3) in (0, 1)
    normals: torch.Tensor  # (H, W, 3) unit
    shadow: torch.Tensor  # (H, W) in (0, 1)
    mask: torch.Tensor  # (H, W) in (0, 1)


class _GatedBlock(torch.nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.feat = torch.nn.Conv2d(c_in, c_out, 3, padding=1)
        self.gate = torch.nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        return self.feat(x) * torch.sigmoid(self.gate(x))


class RenderNet(torch.nn.Module):
    """U-Net over the raw-image pyramid producing the eight-channel head."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        c = config
        enc = []
        for i in range(c.depth):
            extra = c.descriptor_dim if i < c.levels else 0
            c_in = extra if i == 0 else c.stage_channels(i - 1) + extra
            enc.append(_GatedBlock(c_in, c.stage_channels(i)))
        self.encoder = torch.nn.ModuleList(enc)
        dec = []
        for i in range(c.depth - 2, -1, -1):
            c_in = c.stage_channels(i + 1) + c.stage_channels(i)
            dec.append(_GatedBlock(c_in, c.stage_channels(i)))
        self.decoder = torch.nn.ModuleList(dec)
        self.head = torch.nn.Conv2d(c.stage_channels(0), 8, 3, padding=1)

    def forward(self, pyramid: list) -> HeadMaps:
        """Run on a list of (H_t, W_t, L) tensors; returns maps at level-0 size.

        Spatial sizes are zero-padded internally to a multiple of
        2**(depth - 1), so any canvas size works.
        """
        cfg = self.config
        if len(pyramid) < cfg.levels:
            raise ValueError(f"expected {cfg.levels} pyramid levels, got {len(pyramid)}")
        h0, w0 = pyramid[0].shape[:2]
        unit = 2 ** (cfg.depth - 1)
        ph = -(-h0 // unit) * unit
        pw = -(-w0 // unit) * unit

        feats = []
        for t in range(cfg.levels):
            lvl = pyramid[t].permute(2, 0, 1).unsqueeze(0)
            th, tw = ph >> t, pw >> t
            pad = (0, tw - lvl.shape[3], 0, th - lvl.shape[2])
            if pad[1] < 0 or pad[3] < 0:
                raise ValueError("pyramid level larger than its expected size")
            feats.append(F.pad(lvl, pad))

        skips = []
        x = feats[0]
        for i, block in enumerate(self.encoder):
            if i > 0:
                x = F.avg_pool2d(x, 2)
                if i < cfg.levels:
                    x = torch.cat([x, feats[i]], dim=1)
            x = block(x)
            skips.append(x)
        for j, block in enumerate(self.decoder):
            skip = skips[cfg.depth - 2 - j]
            x = F.interpolate(x, scale_factor=2.0, mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        out = self.head(x).squeeze(0)[:, :h0, :w0]

        albedo = torch.sigmoid(out[0:3]).permute(1, 2, 0)
        normals = normalize_normals(out[3:6].permute(1, 2, 0))
        shadow = torch.sigmoid(out[6])
        mask = torch.sigmoid(out[7])
        return HeadMaps(albedo=albedo, normals=normals, shadow=shadow, mask=mask)


def normalize_normals(v: torch.Tensor) -> torch.Tensor:
    """L2-normalize (..., 3) vectors; near-zero inputs fall back to (0, 0, -1)
    with zero gradient."""
    norm = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    safe = norm > _NORM_EPS
    unit = v / torch.where(safe, norm, torch.ones_like(norm))
    fallback = v.new_tensor(NORMAL_FALLBACK).expand_as(v)
    return torch.where(safe, unit, fallback)


def init_params(config: NetConfig, seed: int) -> dict:
    """Deterministic fan-in-scaled uniform initialization of all parameters.

    The normal head's bias is offset along -z so freshly initialized normals
    face the capture arc.
    """
    net = RenderNet(config)
    gen = torch.Generator().manual_seed(seed)
    state = net.state_dict()
    for name in sorted(state):
        t = state[name]
        if name.endswith(".bias"):
            t.zero_()
        else:
            fan_in = t.shape[1] * t.shape[2] * t.shape[3]
            bound = 1.0 / math.sqrt(fan_in)
            t.uniform_(-bound, bound, generator=gen)
    state["head.bias"][5] = -2.0
    return {k: v.numpy().copy() for k, v in state.items()}


def load_net(params: dict, config: NetConfig) -> RenderNet:
    net = RenderNet(config)
    net.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in params.items()})
    return net


def forward(pyramid: list, params: dict, config: NetConfig) -> HeadMaps:
    """Functional head-map evaluation from a parameter blob (no grad)."""
    net = load_net(params, config)
    with torch.no_grad():
        return net(pyramid)
