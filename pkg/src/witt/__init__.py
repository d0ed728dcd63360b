"""Wireless image transmission with a Swin-transformer joint source-channel codec.

The encoder maps an RGB image to a power-normalized frame of complex channel
symbols, an SNR-conditioned modulation network adapts the latent features to
the channel state, and the decoder reconstructs the image from the noisy,
equalized symbols.
"""
from .codec import PRESETS, WITT, ModelConfig, cbr, decode, encode, preset, symbol_count

__all__ = ["PRESETS", "WITT", "ModelConfig", "cbr", "decode", "encode", "preset", "symbol_count"]
__version__ = "0.1.0"
