"""Hierarchical windowed-attention blocks (Swin style), channels-last.

Token grids are tensors shaped (batch, h, w, c). Windows are flattened to
(batch * num_windows, window * window, c) in row-major order.
"""
from __future__ import annotations

import functools
import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

LN_EPS = 1e-5
INIT_STD = 0.02


def trunc_normal_(t: torch.Tensor, std: float = INIT_STD) -> torch.Tensor:
    return nn.init.trunc_normal_(t, std=std, a=-2 * std, b=2 * std)


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, h, w, c) -> (B * h/window * w/window, window**2, c)."""
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ValueError(f"grid {h}x{w} not divisible by window {window}")
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    if h % window or w % window:
        raise ValueError(f"grid {h}x{w} not divisible by window {window}")
    per_image = (h // window) * (w // window)
    if windows.shape[0] % per_image or windows.shape[1] != window * window:
        raise ValueError(f"{tuple(windows.shape)} windows inconsistent with a {h}x{w} grid, window {window}")
    c = windows.shape[-1]
    x = windows.reshape(-1, h // window, w // window, window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, h, w, c)


def relative_position_index(window: int, table_window: int | None = None) -> torch.Tensor:
    """(N, N) indices into a (2*table_window - 1)**2 bias table for a ``window`` x ``window`` window."""
    table_window = table_window or window
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0)
    rel = rel + (table_window - 1)
    return rel[..., 0] * (2 * table_window - 1) + rel[..., 1]


@functools.lru_cache(maxsize=64)
def shift_attention_mask(h: int, w: int, window: int, shift: int) -> Optional[torch.Tensor]:
    """Additive (num_windows, N, N) mask for the cyclically shifted grid, or None when shift == 0.

    Tokens that came from different regions of the unshifted grid get -inf.
    """
    if shift == 0:
        return None
    region = torch.zeros(1, h, w, 1)
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in cuts:
        for ws in cuts:
            region[:, hs, ws, :] = label
            label += 1
    ids = window_partition(region, window).squeeze(-1)
    same = ids[:, :, None] == ids[:, None, :]
    mask = torch.zeros(same.shape)
    return mask.masked_fill(~same, float("-inf"))


class WindowAttention(nn.Module):
    """Multi-head self-attention inside each window, with a learned relative position bias."""

    def __init__(self, dim: int, num_heads: int, window: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"channel count {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.scale = (dim // num_heads) ** -0.5
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, num_heads))
        self.register_buffer("relative_position_index", relative_position_index(window), persistent=False)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def position_bias(self, window: int | None = None) -> torch.Tensor:
        window = window or self.window
        n = window * window
        if window == self.window:
            index = self.relative_position_index
        else:
            index = relative_position_index(window, self.window).to(self.relative_position_index.device)
        bias = self.relative_position_bias_table[index.reshape(-1)]
        return bias.view(n, n, -1).permute(2, 0, 1)

    def attention(self, windows: torch.Tensor, mask: Optional[torch.Tensor] = None):
        """Returns (output, attention weights (B_, heads, N, N))."""
        b_, n, c = windows.shape
        qkv = self.qkv(windows).reshape(b_, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        window = math.isqrt(n)
        if window * window != n or window > self.window:
            raise ValueError(f"{n} tokens per window does not fit a {self.window}x{self.window} window")
        logits = (q * self.scale) @ k.transpose(-2, -1) + self.position_bias(window).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            logits = logits.view(-1, nw, self.num_heads, n, n) + mask.to(logits.dtype)[None, :, None]
            logits = logits.view(-1, self.num_heads, n, n)
        weights = logits.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b_, n, c)
        return self.proj(out), weights

    def forward(self, windows: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.attention(windows, mask)[0]


def swmsa(grid: torch.Tensor, attn: WindowAttention, shift: int, window: int | None = None) -> torch.Tensor:
    """Shifted-window attention: roll by -shift, masked window attention, roll back."""
    _, h, w, _ = grid.shape
    window = window or attn.window
    if shift:
        grid = torch.roll(grid, shifts=(-shift, -shift), dims=(1, 2))
    mask = shift_attention_mask(h, w, window, shift)
    if mask is not None:
        mask = mask.to(grid.device)
    out = window_reverse(attn(window_partition(grid, window), mask), window, h, w)
    if shift:
        out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
    return out


def wmsa(grid: torch.Tensor, attn: WindowAttention, window: int | None = None) -> torch.Tensor:
    return swmsa(grid, attn, 0, window)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def effective_window(h: int, w: int, window: int, shifted: bool) -> tuple[int, int]:
    """(window, shift) for an h x w grid.

    Grids no larger than the window collapse to one unshifted window.
    """
    if min(h, w) <= window:
        return min(h, w), 0
    return window, (window // 2 if shifted else 0)


class SwinBlock(nn.Module):
    """Pre-norm block: x + (S)W-MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, num_heads: int, window: int, shifted: bool = False, mlp_ratio: float = 4.0):
        super().__init__()
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = WindowAttention(dim, num_heads, window)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        window, shift = effective_window(x.shape[1], x.shape[2], self.attn.window, self.shifted)
        x = x + swmsa(self.norm1(x), self.attn, shift, window)
        return x + self.mlp(self.norm2(x))


def swin_block_pair(grid: torch.Tensor, block_a: SwinBlock, block_b: SwinBlock) -> torch.Tensor:
    """Regular-window block followed by its shifted-window partner."""
    return block_b(block_a(grid))


class SwinStage(nn.Module):
    """``depth`` blocks alternating regular and shifted windows."""

    def __init__(self, dim: int, depth: int, num_heads: int, window: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.blocks = nn.ModuleList(
            SwinBlock(dim, num_heads, window, shifted=i % 2 == 1, mlp_ratio=mlp_ratio) for i in range(depth)
        )

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class PatchEmbed(nn.Module):
    """Linear map of each non-overlapping 2x2x3 pixel patch to ``out_dim`` channels."""

    def __init__(self, out_dim: int, in_chans: int = 3, patch: int = 2):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(patch * patch * in_chans, out_dim)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        b, h, w, c = image.shape
        p = self.patch
        if h % p or w % p:
            raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
        x = image.reshape(b, h // p, p, w // p, p, c).permute(0, 1, 3, 2, 4, 5).reshape(b, h // p, w // p, p * p * c)
        return self.proj(x)


def space_to_depth(x: torch.Tensor) -> torch.Tensor:
    """(B, h, w, c) -> (B, h/2, w/2, 4c), each 2x2 block concatenated row-major."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"grid {h}x{w} has an odd side")
    return x.reshape(b, h // 2, 2, w // 2, 2, c).permute(0, 1, 3, 2, 4, 5).reshape(b, h // 2, w // 2, 4 * c)


def depth_to_space(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`space_to_depth`."""
    b, h, w, c4 = x.shape
    if c4 % 4:
        raise ValueError(f"channel count {c4} not divisible by 4")
    c = c4 // 4
    return x.reshape(b, h, w, 2, 2, c).permute(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * w, c)


class PatchMerge(nn.Module):
    """2x downsampling: concat each 2x2 neighbourhood, LayerNorm, linear to ``out_dim``."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * in_dim, eps=LN_EPS)
        self.reduction = nn.Linear(4 * in_dim, out_dim)

    def forward(self, x):
        return self.reduction(self.norm(space_to_depth(x)))


class PatchDivide(nn.Module):
    """2x upsampling mirror of :class:`PatchMerge`: linear to 4*out_dim, then depth-to-space."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.expand = nn.Linear(in_dim, 4 * out_dim)

    def forward(self, x):
        return depth_to_space(self.expand(x))


def init_weights(module: nn.Module) -> None:
    """Truncated normal for projections, zeros for biases and bias tables, identity LayerNorm."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            trunc_normal_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, WindowAttention):
            nn.init.zeros_(m.relative_position_bias_table)
