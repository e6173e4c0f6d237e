"""Differentiable operators the pipeline is built from.

Tensors and reverse-mode gradients come from torch; this module pins down the
exact conventions the rest of the code relies on (channel-last images, padded
vs. valid convolution, out-of-range sampling yields zeros plus a validity
flag) and provides the finite-difference checker used across the test suite.

Forward computation runs in float32 during fitting; gradient verification is
done in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch
import torch.nn.functional as F


def pin_compute_threads() -> None:
    """Run torch single-threaded.

    Intra-op parallel reduction order is the one source of run-to-run float
    noise on CPU; fitting and rendering promise bit-reproducible outputs, so
    they pin the thread count before touching tensors. On small canvases this
    is also faster than threading.
    """
    if torch.get_num_threads() != 1:
        torch.set_num_threads(1)


def conv2d(x: torch.Tensor, w: torch.Tensor, b=None, stride: int = 1, pad: int = 0) -> torch.Tensor:
    """Cross-correlation of (C_in, H, W) with (C_out, C_in, kh, kw) weights."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError(f"incompatible conv shapes {tuple(x.shape)} and {tuple(w.shape)}")
    return F.conv2d(x.unsqueeze(0), w, b, stride=stride, padding=pad).squeeze(0)


def gated_conv(
    x: torch.Tensor,
    w_f: torch.Tensor,
    b_f,
    w_g: torch.Tensor,
    b_g,
    stride: int = 1,
    pad: int = 0,
) -> torch.Tensor:
    """Feature conv modulated by a sigmoid gate conv: conv(x, w_f) * sigmoid(conv(x, w_g))."""
    return conv2d(x, w_f, b_f, stride, pad) * torch.sigmoid(conv2d(x, w_g, b_g, stride, pad))


def bilinear_sample(img: torch.Tensor, coords: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample (H, W, C) at fractional (x, y) positions given as (..., 2).

    Returns (samples (..., C), valid (...,) bool). Positions whose 2x2
    neighborhood is not fully inside the image are invalid and sample to zero.
    Differentiable in both the image and the coordinates.
    """
    if img.ndim == 2:
        img = img.unsqueeze(-1)
    h, w, c = img.shape
    if h < 2 or w < 2:
        raise ValueError("bilinear sampling needs at least a 2x2 image")
    x = coords[..., 0]
    y = coords[..., 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    valid = valid & torch.isfinite(x) & torch.isfinite(y)

    xs = torch.where(valid, x, torch.zeros_like(x))
    ys = torch.where(valid, y, torch.zeros_like(y))
    x0 = xs.detach().floor().clamp(0, max(w - 2, 0)).long()
    y0 = ys.detach().floor().clamp(0, max(h - 2, 0)).long()
    wx = (xs - x0).clamp(0, 1)
    wy = (ys - y0).clamp(0, 1)

    flat = img.reshape(h * w, c)
    i00 = (y0 * w + x0).reshape(-1)
    i01 = i00 + 1
    i10 = i00 + w
    i11 = i10 + 1
    shape = (*x.shape, c)
    v00 = flat[i00].reshape(shape)
    v01 = flat[i01].reshape(shape)
    v10 = flat[i10].reshape(shape)
    v11 = flat[i11].reshape(shape)

    wx = wx.unsqueeze(-1)
    wy = wy.unsqueeze(-1)
    out = (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )
    return out * valid.unsqueeze(-1).to(out.dtype), valid


def avg_pool(img: torch.Tensor, k: int) -> torch.Tensor:
    """Non-overlapping K x K average pooling of (H, W) or (H, W, C)."""
    if k < 1:
        raise ValueError("pool size must be >= 1")
    squeeze = img.ndim == 2
    if squeeze:
        img = img.unsqueeze(-1)
    x = img.permute(2, 0, 1).unsqueeze(0)
    out = F.avg_pool2d(x, k).squeeze(0).permute(1, 2, 0)
    return out.squeeze(-1) if squeeze else out


def total_variation(img: torch.Tensor) -> torch.Tensor:
    """Anisotropic L1 total variation, normalized by element count."""
    dx = (img[:, 1:] - img[:, :-1]).abs().sum()
    dy = (img[1:, :] - img[:-1, :]).abs().sum()
    return (dx + dy) / img.numel()


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T.contiguous()


def sobel_magnitude(img: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Per-channel 3x3 Sobel gradient magnitude of (H, W, C), valid region only.

    No padding: the output is (H-2, W-2, C), so a constant offset added to the
    image leaves the result unchanged.
    """
    h, w = img.shape[:2]
    if h < 3 or w < 3:
        raise ValueError("image too small for a 3x3 stencil")
    x = img.permute(2, 0, 1).unsqueeze(1)  # (C, 1, H, W)
    kx = _SOBEL_X.to(img.dtype).reshape(1, 1, 3, 3)
    ky = _SOBEL_Y.to(img.dtype).reshape(1, 1, 3, 3)
    gx = F.conv2d(x, kx)
    gy = F.conv2d(x, ky)
    mag = torch.sqrt(gx * gx + gy * gy + eps)
    return mag.squeeze(1).permute(1, 2, 0)


def grad_check(
    f: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    eps: float = 1e-6,
    max_probe: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Inputs are promoted to float64 leaves; the error for each input is
    ``max|analytic - fd|`` normalized by the largest gradient magnitude seen,
    so tiny individual components do not blow up the ratio. With ``max_probe``
    set, only that many (deterministically strided) elements per input are
    finite-differenced, which keeps checks on large tensors tractable.
    """
    leaves = [
        t.detach().double().clone().requires_grad_(True) if torch.is_tensor(t) else t
        for t in inputs
    ]
    out = f(*leaves)
    if out.numel() != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    grads = torch.autograd.grad(out, [t for t in leaves if torch.is_tensor(t)], allow_unused=True)

    worst = 0.0
    ti = 0
    for t in leaves:
        if not torch.is_tensor(t):
            continue
        analytic = grads[ti]
        ti += 1
        analytic = torch.zeros_like(t) if analytic is None else analytic
        flat = t.reshape(-1)
        n = flat.numel()
        if max_probe and n > max_probe:
            stride = max(1, n // max_probe)
            probes = list(range(0, n, stride))[:max_probe]
        else:
            probes = range(n)
        a_flat = analytic.reshape(-1)
        fd_vals = torch.zeros(len(list(probes)), dtype=torch.float64)
        a_vals = torch.zeros_like(fd_vals)
        for k, i in enumerate(probes):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                hi = f(*leaves).item()
                flat[i] = orig - eps
                lo = f(*leaves).item()
                flat[i] = orig
            fd_vals[k] = (hi - lo) / (2 * eps)
            a_vals[k] = a_flat[i]
        scale = max(a_vals.abs().max().item(), fd_vals.abs().max().item(), 1e-12)
        worst = max(worst, (a_vals - fd_vals).abs().max().item() / scale)
    return worst
