"""Fitting losses and the composite objective.

The image mismatch pairs a high-frequency term (L1 between multi-scale Sobel
gradient magnitudes, standing in for a pretrained perceptual network) with a
color term (L1 between average-pooled images). Texture-space losses are
evaluated on valid texels only and normalized by the valid count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .ops import avg_pool, bilinear_sample, sobel_magnitude, total_variation

PROXY_SCALES = 3
DICE_EPS = 1.0


@dataclass
class LossWeights:
    normal: float = 0.1
    symm: float = 0.02
    cm: float = 100.0
    tv: float = 50.0
    mask: float = 1000.0
    beta: float = 2500.0
    pool_k: int = 4

    def __post_init__(self):
        if min(self.normal, self.symm, self.cm, self.tv, self.mask, self.beta) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    """Per-term scalars and the weighted total for one training step."""

    final: float
    normal: float
    symm: float
    cm: float
    tv: float
    mask: float
    total: float
    step: int = -1

    CSV_HEADER = "step,final,normal,symm,cm,tv,mask,total"

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.final:.8g},{self.normal:.8g},{self.symm:.8g},"
            f"{self.cm:.8g},{self.tv:.8g},{self.mask:.8g},{self.total:.8g}"
        )


def _zero(like: torch.Tensor) -> torch.Tensor:
    # zero that stays on the tape, so empty-support losses backprop zero grads
    return like.sum() * 0.0


def _erode3(valid: torch.Tensor) -> torch.Tensor:
    """Binary 3x3 erosion without padding, aligned with valid-conv outputs."""
    v = valid.to(torch.float32).unsqueeze(0).unsqueeze(0)
    return (-F.max_pool2d(-v, 3, stride=1)).squeeze(0).squeeze(0) >= 0.999


def masked_mismatch(
    img1: torch.Tensor,
    img2: torch.Tensor,
    valid: Optional[torch.Tensor] = None,
    beta: float = 2500.0,
    pool_k: int = 4,
) -> torch.Tensor:
    """Image mismatch over the valid region.

    Both images are zeroed outside ``valid``; every L1 average runs over the
    valid support only. With ``valid=None`` the full canvas counts, which is
    the plain two-image mismatch.
    """
    if img1.shape != img2.shape:
        raise ValueError(f"shape mismatch {tuple(img1.shape)} vs {tuple(img2.shape)}")
    if img1.ndim == 2:
        img1 = img1.unsqueeze(-1)
        img2 = img2.unsqueeze(-1)
    channels = img1.shape[-1]
    if valid is None:
        mask = torch.ones(img1.shape[:2], dtype=img1.dtype)
    else:
        mask = valid.to(img1.dtype)
        if mask.shape != img1.shape[:2]:
            raise ValueError("valid mask shape differs from the images")
    if mask.sum() == 0:
        return _zero(img1)

    m3 = mask.unsqueeze(-1)
    a0 = img1 * m3
    b0 = img2 * m3

    total = _zero(img1)

    # gradient-magnitude term across dyadic scales
    a, b, m = a0, b0, mask
    for s in range(PROXY_SCALES):
        if s > 0:
            a, b, m = avg_pool(a, 2), avg_pool(b, 2), avg_pool(m, 2)
        if min(a.shape[0], a.shape[1]) < 3:
            break
        w = _erode3(m >= 0.999).to(img1.dtype)
        denom = w.sum() * channels
        if denom == 0:
            continue
        diff = (sobel_magnitude(a) - sobel_magnitude(b)).abs()
        total = total + (diff * w.unsqueeze(-1)).sum() / denom

    # pooled color term; cells are normalized by their valid mass so fully
    # masked-out cells drop from the average
    pm = avg_pool(mask.unsqueeze(-1), pool_k).squeeze(-1)
    denom = pm.sum() * channels
    if denom > 0:
        pooled = (avg_pool(a0, pool_k) - avg_pool(b0, pool_k)).abs().sum()
        total = total + beta * pooled / denom
    return total


def mismatch(img1: torch.Tensor, img2: torch.Tensor, beta: float = 2500.0, pool_k: int = 4) -> torch.Tensor:
    """Plain two-image mismatch (full canvas)."""
    return masked_mismatch(img1, img2, None, beta, pool_k)


def loss_final(
    rendered: torch.Tensor, target: torch.Tensor, target_mask: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """Main loss: mismatch restricted to the ground-truth foreground."""
    return masked_mismatch(rendered, target, target_mask > 0.5, weights.beta, weights.pool_k)


def loss_mask(m_pred: torch.Tensor, m_gt: torch.Tensor) -> torch.Tensor:
    """-log Dice between soft masks, smoothed by one pixel."""
    inter = (m_pred * m_gt).sum()
    dice = (2 * inter + DICE_EPS) / (m_pred.sum() + m_gt.sum() + DICE_EPS)
    return -torch.log(dice)


def loss_tv(shadow: torch.Tensor) -> torch.Tensor:
    """Total variation of the shadow map, pushing detail into the albedo."""
    return total_variation(shadow)


def _sample_texture(albedo: torch.Tensor, posmap) -> tuple[torch.Tensor, torch.Tensor]:
    coords = posmap if torch.is_tensor(posmap) else torch.from_numpy(posmap)
    return bilinear_sample(albedo, coords.to(albedo.dtype))


def loss_symm(albedo: torch.Tensor, posmap, half_tex: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Compare the albedo's face texture against [T, flip(T)] of the learned half-texture."""
    sampled, valid = _sample_texture(albedo, posmap)
    target = torch.cat([half_tex, torch.flip(half_tex, dims=[1])], dim=1)
    return masked_mismatch(sampled, target.to(sampled.dtype), valid, weights.beta, weights.pool_k)


def loss_cm(
    albedo: torch.Tensor, posmap, flash_tex: torch.Tensor, flash_tex_valid: torch.Tensor
) -> torch.Tensor:
    """L1 between the sampled albedo texture and the fixed median flash texture."""
    sampled, valid = _sample_texture(albedo, posmap)
    v = (valid & flash_tex_valid).to(sampled.dtype).unsqueeze(-1)
    denom = v.sum() * sampled.shape[-1]
    if denom == 0:
        return _zero(albedo)
    return ((sampled - flash_tex.to(sampled.dtype)).abs() * v).sum() / denom


def loss_normal(
    n_pred: torch.Tensor, n_gt: torch.Tensor, face_mask: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """Mismatch between predicted and reference normals, masked to the face region."""
    m = face_mask.to(n_pred.dtype).unsqueeze(-1)
    return mismatch(n_pred * m, n_gt.to(n_pred.dtype) * m, weights.beta, weights.pool_k)


def composite_loss(
    final: torch.Tensor,
    normal: torch.Tensor,
    symm: torch.Tensor,
    cm: torch.Tensor,
    tv: torch.Tensor,
    mask: torch.Tensor,
    weights: LossWeights,
    step: int = -1,
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of all terms plus a per-term report."""
    total = (
        final
        + weights.normal * normal
        + weights.symm * symm
        + weights.cm * cm
        + weights.tv * tv
        + weights.mask * mask
    )
    report = LossReport(
        final=float(final.detach()),
        normal=float(normal.detach()),
        symm=float(symm.detach()),
        cm=float(cm.detach()),
        tv=float(tv.detach()),
        mask=float(mask.detach()),
        total=float(total.detach()),
        step=step,
    )
    return total, report
