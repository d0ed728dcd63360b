"""SNR-conditioned feature modulation.

A ModNet is a chain of width-preserving linear layers; between consecutive
layers the features are multiplied element-wise by a gate vector computed
from the scalar channel SNR (in dB) by a small three-layer network.
"""
from __future__ import annotations

from typing import Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import trunc_normal_

Snr = Union[float, torch.Tensor]

NUM_FC = 8
GATE_BIAS_INIT = 3.0


def snr_column(snr: Snr, batch: int, like: torch.Tensor) -> torch.Tensor:
    """Scalar or per-sample SNR as a (batch, 1) tensor matching ``like``'s dtype/device."""
    snr = torch.as_tensor(snr, dtype=like.dtype, device=like.device)
    if not torch.all(torch.isfinite(snr)):
        raise ValueError("SNR must be finite")
    if snr.numel() == 1:
        return snr.reshape(1, 1).expand(batch, 1)
    return snr.reshape(batch, 1)


class SnrModulator(nn.Module):
    """Maps SNR (dB) to a gate vector: ReLU, ReLU, then sigmoid (or ReLU) output."""

    def __init__(self, width: int, hidden: int = 64, final_activation: str = "sigmoid"):
        super().__init__()
        if final_activation not in ("sigmoid", "relu"):
            raise ValueError(f"unknown final activation {final_activation!r}")
        self.final_activation = final_activation
        self.fc1 = nn.Linear(1, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, width)

    def forward(self, snr_col: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.fc1(snr_col))
        h = F.relu(self.fc2(h))
        out = self.fc3(h)
        return torch.sigmoid(out) if self.final_activation == "sigmoid" else F.relu(out)


def sm_forward(snr: Snr, params: SnrModulator) -> torch.Tensor:
    """Gate vector for a scalar SNR, shape (width,)."""
    like = params.fc1.weight
    return params(snr_column(snr, 1, like))[0]


class ChannelModNet(nn.Module):
    """FC, gate, FC, gate, ..., FC over the last axis of any (batch, ..., width) tensor.

    ``force_unit_gates`` replaces every gate by 1 (the plain linear chain).
    """

    def __init__(
        self,
        width: int,
        hidden: int = 64,
        num_fc: int = NUM_FC,
        final_activation: str = "sigmoid",
        relu_after_fc: bool = False,
    ):
        super().__init__()
        self.width = width
        self.relu_after_fc = relu_after_fc
        self.force_unit_gates = False
        self.fcs = nn.ModuleList(nn.Linear(width, width) for _ in range(num_fc))
        self.sms = nn.ModuleList(SnrModulator(width, hidden, final_activation) for _ in range(num_fc - 1))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """Identity FC layers and near-one gates, so a fresh ModNet starts close to a pass-through."""
        for fc in self.fcs:
            nn.init.eye_(fc.weight)
            nn.init.zeros_(fc.bias)
        for sm in self.sms:
            for lin in (sm.fc1, sm.fc2, sm.fc3):
                trunc_normal_(lin.weight)
                nn.init.zeros_(lin.bias)
            nn.init.constant_(sm.fc3.bias, GATE_BIAS_INIT)

    def gates(self, snr: Snr, batch: int) -> list[torch.Tensor]:
        col = snr_column(snr, batch, self.fcs[0].weight)
        return [sm(col) for sm in self.sms]

    def forward(self, x: torch.Tensor, snr: Snr) -> torch.Tensor:
        if x.shape[-1] != self.width:
            raise ValueError(f"feature width {x.shape[-1]} does not match ModNet width {self.width}")
        batch = x.shape[0]
        gates = None if self.force_unit_gates else self.gates(snr, batch)
        bcast = (batch,) + (1,) * (x.ndim - 2) + (self.width,)
        for i, fc in enumerate(self.fcs):
            x = fc(x)
            if self.relu_after_fc and i < len(self.fcs) - 1:
                x = F.relu(x)
            if i < len(self.sms) and gates is not None:
                x = x * gates[i].reshape(bcast)
        return x


def modnet_forward(features: torch.Tensor, snr: Snr, params: ChannelModNet) -> torch.Tensor:
    return params(features, snr)
