"""Encoder / decoder assembly, channel bandwidth accounting and the end-to-end model."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .backbone import PatchDivide, PatchEmbed, PatchMerge, SwinStage, init_weights
from .channel import AWGN, ChannelRng, equalize, from_symbols, to_symbols, transmit
from .modnet import ChannelModNet


@dataclass
class ModelConfig:
    depths: Sequence[int]
    widths: Sequence[int]
    window: int
    latent_dim: int
    modnet_hidden: int = 64
    heads: Optional[Sequence[int]] = None
    mlp_ratio: float = 4.0
    equalization: str = "mmse"
    metric: str = "mse"
    modnet_final_activation: str = "sigmoid"
    modnet_relu_after_fc: bool = False

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.widths = [int(c) for c in self.widths]
        if len(self.depths) != len(self.widths) or not self.depths:
            raise ValueError("depths and widths must be non-empty and of equal length")
        if any(b < a for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError(f"widths must be non-decreasing, got {self.widths}")
        if self.latent_dim < 0:
            raise ValueError("latent_dim must be non-negative")
        if self.heads is None:
            self.heads = [max(1, c // 32) for c in self.widths]
        self.heads = [int(h) for h in self.heads]
        if len(self.heads) != self.n:
            raise ValueError("need one head count per stage")
        for c, h in zip(self.widths, self.heads):
            if c % h:
                raise ValueError(f"width {c} not divisible by {h} heads")
        if self.equalization not in ("mmse", "none"):
            raise ValueError(f"unknown equalization {self.equalization!r}")
        if self.metric not in ("mse", "msssim"):
            raise ValueError(f"unknown metric {self.metric!r}")

    @property
    def n(self) -> int:
        return len(self.depths)

    @property
    def multiple(self) -> int:
        """Image sides must be multiples of this."""
        return 2 ** self.n

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "tiny": ModelConfig(depths=[1, 1], widths=[32, 48], window=2, latent_dim=32),
    "cifar2stage": ModelConfig(depths=[2, 4], widths=[128, 256], window=2, latent_dim=32),
    "hires4stage": ModelConfig(depths=[1, 1, 2, 6], widths=[128, 192, 256, 320], window=8, latent_dim=96),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].replace(**overrides)


def cbr(config: ModelConfig) -> Fraction:
    """Channel bandwidth ratio C / (2 * 3 * 2^n * 2^n), exact."""
    return Fraction(config.latent_dim, 2 * 3 * 4 ** config.n)


def symbol_count(config: ModelConfig, height: int, width: int) -> int:
    return (height // config.multiple) * (width // config.multiple) * config.latent_dim // 2


class Encoder(nn.Module):
    """Patch embedding, stages with patch merging, ModNet, projection to ``latent_dim``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.widths
        self.patch_embed = PatchEmbed(c[0])
        self.merges = nn.ModuleList(PatchMerge(c[i - 1], c[i]) for i in range(1, config.n))
        self.stages = nn.ModuleList(
            SwinStage(c[i], config.depths[i], config.heads[i], config.window, config.mlp_ratio) for i in range(config.n)
        )
        self.modnet = ChannelModNet(
            c[-1], config.modnet_hidden,
            final_activation=config.modnet_final_activation, relu_after_fc=config.modnet_relu_after_fc,
        )
        self.head = nn.Linear(c[-1], config.latent_dim)

    def forward(self, image: torch.Tensor, snr, use_modnet: bool = True) -> torch.Tensor:
        """(B, H, W, 3) -> latent grid (B, H/2^n, W/2^n, latent_dim)."""
        x = self.stages[0](self.patch_embed(image))
        for merge, stage in zip(self.merges, self.stages[1:]):
            x = stage(merge(x))
        if use_modnet:
            x = self.modnet(x, snr)
        return self.head(x)


class Decoder(nn.Module):
    """Projection from ``latent_dim``, ModNet, mirrored stages with patch division, pixel head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.widths
        n = config.n
        self.head_in = nn.Linear(config.latent_dim, c[-1])
        self.modnet = ChannelModNet(
            c[-1], config.modnet_hidden,
            final_activation=config.modnet_final_activation, relu_after_fc=config.modnet_relu_after_fc,
        )
        # stage order n..1
        self.stages = nn.ModuleList(
            SwinStage(c[i], config.depths[i], config.heads[i], config.window, config.mlp_ratio)
            for i in reversed(range(n))
        )
        self.divides = nn.ModuleList(PatchDivide(c[i], c[i - 1]) for i in reversed(range(1, n)))
        self.pixel_head = PatchDivide(c[0], 3)

    def forward(self, latent: torch.Tensor, snr, use_modnet: bool = True) -> torch.Tensor:
        x = self.head_in(latent)
        if use_modnet:
            x = self.modnet(x, snr)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.divides):
                x = self.divides[i](x)
        return self.pixel_head(x)


class WITT(nn.Module):
    """End-to-end codec: encode to power-normalized symbols, channel, equalize, decode.

    ``use_modnet=False`` bypasses both ModNets (first training phase).
    """

    def __init__(self, config: ModelConfig, seed: Optional[int] = None):
        super().__init__()
        if config.latent_dim <= 0 or config.latent_dim % 2:
            raise ValueError("latent_dim must be a positive even number")
        self.config = config
        if seed is not None:
            torch.manual_seed(seed)
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)
        init_weights(self)
        self.encoder.modnet.reset_parameters()
        self.decoder.modnet.reset_parameters()
        self.use_modnet = True

    def modnets(self) -> list[ChannelModNet]:
        return [self.encoder.modnet, self.decoder.modnet]

    def modnet_parameter_names(self) -> set[str]:
        return {name for name, _ in self.named_parameters() if ".modnet." in name}

    def check_image(self, height: int, width: int) -> None:
        m = self.config.multiple
        if height % m or width % m:
            raise ValueError(f"image dims {height}x{width} must be divisible by {m}")

    def encode(self, image: torch.Tensor, snr) -> torch.Tensor:
        """(B, H, W, 3) -> unit-power complex frames (B, k)."""
        self.check_image(image.shape[1], image.shape[2])
        latent = self.encoder(image, snr, self.use_modnet)
        return to_symbols(latent.reshape(latent.shape[0], -1))

    def decode(self, frame: torch.Tensor, snr, out_hw: tuple[int, int]) -> torch.Tensor:
        h, w = out_hw
        self.check_image(h, w)
        gh, gw = h // self.config.multiple, w // self.config.multiple
        expected = gh * gw * self.config.latent_dim // 2
        if frame.shape[-1] != expected:
            raise ValueError(f"{frame.shape[-1]} symbols received, {expected} expected for {h}x{w}")
        latent = from_symbols(frame).reshape(frame.shape[0], gh, gw, self.config.latent_dim)
        return self.decoder(latent, snr, self.use_modnet)

    def forward(self, image: torch.Tensor, snr, kind: str = AWGN, rng: Optional[ChannelRng] = None,
                equalization: Optional[str] = None, noiseless: bool = False) -> torch.Tensor:
        frame = self.encode(image, snr)
        if not noiseless:
            rng = rng if rng is not None else ChannelRng(0)
            received, real = transmit(frame, snr, kind, rng)
            frame = equalize(received, real, equalization or self.config.equalization)
        return self.decode(frame, snr, (image.shape[1], image.shape[2]))


def encode(image, snr, model: WITT) -> torch.Tensor:
    return model.encode(_as_tensor(image, model), snr)


def decode(received: torch.Tensor, snr, model: WITT, out_dims: tuple[int, int]) -> torch.Tensor:
    return model.decode(received, snr, out_dims)


def _as_tensor(image, model: nn.Module) -> torch.Tensor:
    data = getattr(image, "data", image)
    dtype = next(model.parameters()).dtype
    if isinstance(data, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(data)).to(dtype)
    return data.to(dtype)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
