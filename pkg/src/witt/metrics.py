"""Distortion losses and quality metrics for (batch, H, W, 3) images in [0, 1]."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

PSNR_CAP_DB = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MIN_SCALE_SIDE = 8


def _check_shapes(x, y):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def loss_mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    _check_shapes(x, x_hat)
    return torch.mean((x - x_hat) ** 2)


def mse_to_psnr(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


def psnr(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    """10 log10(1 / MSE) with peak 1; exact matches return ``PSNR_CAP_DB``."""
    return mse_to_psnr(float(loss_mse(x, x_hat)))


def psnr_per_image(x: torch.Tensor, x_hat: torch.Tensor) -> list[float]:
    _check_shapes(x, x_hat)
    mse = ((x - x_hat) ** 2).flatten(1).mean(dim=1)
    return [mse_to_psnr(float(m)) for m in mse]


def msssim_to_db(v: float) -> float:
    """-10 log10(1 - v); v == 1 maps to the 100 dB cap."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"MS-SSIM value {v} outside [0, 1]")
    if v == 1.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(1.0 - v))


def gaussian_window(size: int, sigma: float = WINDOW_SIGMA, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def num_scales(min_side: int) -> int:
    """5 scales from 160 px up; smaller images use fewer (3 for 32 px)."""
    if min_side >= 160:
        return 5
    if min_side < MIN_SCALE_SIDE:
        raise ValueError(f"image side {min_side} too small for MS-SSIM (need >= {MIN_SCALE_SIDE})")
    return min(4, 1 + int(math.floor(math.log2(min_side / MIN_SCALE_SIDE))))


def scale_weights(scales: int) -> list[float]:
    w = MSSSIM_WEIGHTS[:scales]
    total = sum(w)
    return [v / total for v in w]


def _filter(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    size = win.numel()
    x = F.conv2d(x, win.view(1, 1, size, 1).expand(c, 1, size, 1), groups=c)
    return F.conv2d(x, win.view(1, 1, 1, size).expand(c, 1, 1, size), groups=c)


def _ssim_terms(x: torch.Tensor, y: torch.Tensor):
    """Per-channel mean luminance*cs and cs maps over the valid region; (B, C) each."""
    side = min(x.shape[-2:])
    size = min(WINDOW_SIZE, side if side % 2 else side - 1)
    win = gaussian_window(size, dtype=x.dtype).to(x.device)
    c1, c2 = K1 ** 2, K2 ** 2
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mu_x ** 2
    syy = _filter(y * y, win) - mu_y ** 2
    sxy = _filter(x * y, win) - mu_x * mu_y
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    return (lum * cs_map).flatten(2).mean(-1), cs_map.flatten(2).mean(-1)


def ssim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Single-scale SSIM per image, averaged over channels."""
    _check_shapes(x, y)
    s, _ = _ssim_terms(x.permute(0, 3, 1, 2), y.permute(0, 3, 1, 2))
    return s.mean(1)


def ms_ssim_per_image(x: torch.Tensor, y: torch.Tensor, scales: int | None = None) -> torch.Tensor:
    """Multi-scale SSIM, (B,) values in [0, 1].

    Gaussian window 11 / sigma 1.5, 2x average pooling between scales, non-positive
    terms clamped to ~0 before the weighted geometric mean.
    """
    _check_shapes(x, y)
    x = x.permute(0, 3, 1, 2)
    y = y.permute(0, 3, 1, 2)
    scales = scales or num_scales(min(x.shape[-2:]))
    weights = torch.tensor(scale_weights(scales), dtype=x.dtype, device=x.device)
    terms = []
    for i in range(scales):
        s, cs = _ssim_terms(x, y)
        terms.append(s if i == scales - 1 else cs)
        if i < scales - 1:
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
    # clamp, not relu: keeps pow's derivative finite where a term is <= 0
    stack = torch.stack(terms, dim=0).clamp(min=1e-12)  # (scales, B, C)
    value = torch.prod(stack ** weights.view(-1, 1, 1), dim=0)
    return value.mean(1).clamp(0.0, 1.0)


def ms_ssim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return ms_ssim_per_image(x, y).mean()


def loss_msssim(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return 1.0 - ms_ssim(x, x_hat)


LOSSES = {"mse": loss_mse, "msssim": loss_msssim}
