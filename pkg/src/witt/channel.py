"""Complex symbol mapping, power normalization, AWGN / Rayleigh fast fading, MMSE equalization.

Frames are complex tensors shaped (batch, k): one row per transmitted image.
Every operation is differentiable with respect to the transmitted symbols;
fading and noise draws enter as constants.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

AWGN = "awgn"
RAYLEIGH = "rayleigh"
CHANNEL_KINDS = (AWGN, RAYLEIGH)
EQUALIZERS = ("mmse", "none")


class DegenerateInputError(ValueError):
    """Raised when a frame has zero energy and cannot be power normalized."""


def power_normalize(frame: torch.Tensor) -> torch.Tensor:
    """Scale each row to unit average symbol power: sqrt(k) * y / ||y||."""
    squeeze = frame.ndim == 1
    if squeeze:
        frame = frame.unsqueeze(0)
    k = frame.shape[-1]
    energy = (frame.real ** 2 + frame.imag ** 2).sum(dim=-1, keepdim=True)
    if torch.any(energy == 0):
        raise DegenerateInputError("cannot power-normalize a zero-energy frame")
    out = frame * torch.rsqrt(energy / k)
    return out[0] if squeeze else out


def to_symbols(features: torch.Tensor) -> torch.Tensor:
    """Pair consecutive reals (re, im) into complex symbols, then power normalize."""
    if features.shape[-1] % 2:
        raise ValueError(f"need an even number of reals, got {features.shape[-1]}")
    pairs = features.reshape(*features.shape[:-1], -1, 2)
    return power_normalize(torch.complex(pairs[..., 0], pairs[..., 1]))


def from_symbols(frame: torch.Tensor) -> torch.Tensor:
    """Interleave (re, im): complex (..., k) -> real (..., 2k)."""
    return torch.stack((frame.real, frame.imag), dim=-1).flatten(-2)


def snr_to_sigma2(snr_db):
    """Noise power per complex symbol for unit signal power."""
    if isinstance(snr_db, torch.Tensor):
        return torch.pow(10.0, -snr_db / 10.0)
    return 10.0 ** (-float(snr_db) / 10.0)


class ChannelRng:
    """Seeded generator with independent named streams for fading and noise."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        fade_seed, noise_seed = (
            int(np.random.SeedSequence(self.seed, spawn_key=(i,)).generate_state(1, np.uint64)[0] >> 1)
            for i in (1, 2)
        )
        self.fading = torch.Generator().manual_seed(fade_seed)
        self.noise = torch.Generator().manual_seed(noise_seed)


def complex_normal(shape, variance, generator: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    """Circularly symmetric complex Gaussian with E|z|^2 = variance."""
    re = torch.randn(shape, generator=generator, dtype=dtype)
    im = torch.randn(shape, generator=generator, dtype=dtype)
    scale = torch.sqrt(torch.as_tensor(variance, dtype=dtype) / 2)
    return torch.complex(re * scale, im * scale)


@dataclass
class ChannelRealization:
    h: torch.Tensor
    sigma2: Union[float, torch.Tensor]
    kind: str
    noise: Optional[torch.Tensor] = None

    def __len__(self):
        return self.h.shape[-1]


def sigma2_column(snr, batch: int, dtype) -> Union[float, torch.Tensor]:
    if isinstance(snr, torch.Tensor) and snr.numel() > 1:
        return snr_to_sigma2(snr.to(dtype)).reshape(batch, 1)
    s = float(snr)
    return 0.0 if math.isinf(s) and s > 0 else snr_to_sigma2(s)


def draw_realization(shape, snr, kind: str, rng: ChannelRng, dtype=torch.float32) -> ChannelRealization:
    if kind not in CHANNEL_KINDS:
        raise ValueError(f"unknown channel kind {kind!r}")
    batch = shape[0] if len(shape) > 1 else 1
    sigma2 = sigma2_column(snr, batch, dtype)
    if kind == AWGN:
        h = torch.complex(torch.ones(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))
    else:
        h = complex_normal(shape, 1.0, rng.fading, dtype)
    noise = complex_normal(shape, sigma2 if isinstance(sigma2, torch.Tensor) else float(sigma2), rng.noise, dtype)
    return ChannelRealization(h=h, sigma2=sigma2, kind=kind, noise=noise)


def apply_channel(frame: torch.Tensor, real: ChannelRealization) -> torch.Tensor:
    """h * y + n with the draws held fixed."""
    out = real.h * frame
    return out + real.noise if real.noise is not None else out


def transmit(frame: torch.Tensor, snr, kind: str, rng: ChannelRng):
    """Send a power-normalized frame through the channel; returns (received, realization)."""
    real = draw_realization(tuple(frame.shape), snr, kind, rng, dtype=frame.real.dtype)
    return apply_channel(frame, real), real


def equalize(received: torch.Tensor, real: ChannelRealization, mode: str = "mmse") -> torch.Tensor:
    """Per-symbol MMSE estimate conj(h) * y / (|h|^2 + sigma2); ``mode='none'`` passes through."""
    if mode == "none":
        return received
    if mode != "mmse":
        raise ValueError(f"unknown equalization {mode!r}")
    if real.h.shape[-1] != received.shape[-1]:
        raise ValueError("realization length does not match frame")
    h = real.h
    denom = h.real ** 2 + h.imag ** 2 + real.sigma2
    return torch.conj(h) * received / denom


def measured_snr_db(frame: torch.Tensor, real: ChannelRealization) -> float:
    """Empirical receive SNR, E|h|^2 * P_signal / P_noise, in dB."""
    p_sig = torch.mean(frame.real ** 2 + frame.imag ** 2) * torch.mean(real.h.real ** 2 + real.h.imag ** 2)
    p_noise = torch.mean(real.noise.real ** 2 + real.noise.imag ** 2)
    return float(10 * torch.log10(p_sig / p_noise))


def dump_trace(path, sent: torch.Tensor, real: ChannelRealization, received: torch.Tensor) -> None:
    """Debug CSV: index, re/im of sent symbol, fading coefficient and received symbol."""
    cols = [sent.flatten(), real.h.flatten(), received.flatten()]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "re_y", "im_y", "re_h", "im_h", "re_yhat", "im_yhat"])
        for i, (y, h, r) in enumerate(zip(*(c.detach().tolist() for c in cols))):
            w.writerow([i, y.real, y.imag, h.real, h.imag, r.real, r.imag])
