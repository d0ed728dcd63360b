import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from witt.channel import (
    AWGN,
    RAYLEIGH,
    ChannelRealization,
    ChannelRng,
    DegenerateInputError,
    apply_channel,
    draw_realization,
    dump_trace,
    equalize,
    from_symbols,
    measured_snr_db,
    power_normalize,
    snr_to_sigma2,
    to_symbols,
    transmit,
)

from conftest import central_difference


def _power(frame):
    return (frame.abs() ** 2).mean(-1)


def test_to_symbols_pairs_and_keeps_unit_frame():
    out = to_symbols(torch.tensor([1.0, 0.0, 0.0, 1.0]))
    assert torch.allclose(out, torch.tensor([1 + 0j, 0 + 1j], dtype=torch.complex64))


def test_to_symbols_length_and_odd():
    assert to_symbols(torch.randn(3, 10)).shape == (3, 5)
    with pytest.raises(ValueError):
        to_symbols(torch.randn(7))


def test_to_symbols_zero_is_degenerate():
    with pytest.raises(DegenerateInputError):
        to_symbols(torch.zeros(8))


def test_power_normalize_single_symbol():
    out = power_normalize(torch.tensor([3 + 4j], dtype=torch.complex128))
    assert torch.allclose(out, torch.tensor([0.6 + 0.8j], dtype=torch.complex128), atol=1e-15)


def test_power_normalize_constant_magnitude():
    frame = 2.5 * torch.exp(1j * torch.linspace(0, 3, 7, dtype=torch.float64))
    assert torch.allclose(power_normalize(frame).abs(), torch.ones(7, dtype=torch.float64))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.sampled_from([2, 6, 64])),
              elements=st.floats(-1e3, 1e3)))
def test_power_constraint_property(features):
    x = torch.from_numpy(features)
    if torch.any((x.reshape(x.shape[0], -1) ** 2).sum(-1) == 0):
        return
    assert torch.all((_power(to_symbols(x)) - 1).abs() < 1e-9)


def test_power_constraint_single_precision():
    frame = to_symbols(torch.randn(16, 2048) * 37.0)
    assert torch.all((_power(frame) - 1).abs() < 1e-5)


def test_power_normalize_per_frame():
    x = torch.cat([torch.ones(1, 8), 100 * torch.ones(1, 8)])
    frames = to_symbols(x)
    assert torch.allclose(frames[0], frames[1])


@pytest.mark.parametrize("snr,expected", [(0.0, 1.0), (10.0, 0.1), (13.0, 0.050119)])
def test_snr_to_sigma2(snr, expected):
    assert snr_to_sigma2(snr) == pytest.approx(expected, rel=1e-5 if snr == 13.0 else 1e-15)


def test_noiseless_awgn_identity():
    frame = to_symbols(torch.randn(2, 20))
    received, real = transmit(frame, math.inf, AWGN, ChannelRng(0))
    assert torch.equal(received, frame)
    assert torch.equal(equalize(received, real), frame)


@pytest.mark.parametrize("kind", [AWGN, RAYLEIGH])
def test_receive_snr_calibration(kind):
    frame = to_symbols(torch.randn(1, 2_000_000, dtype=torch.float64))
    _, real = transmit(frame, 10.0, kind, ChannelRng(11))
    assert abs(measured_snr_db(frame, real) - 10.0) < 0.1


def test_rayleigh_unit_mean_power():
    real = draw_realization((1, 1_000_000), 5.0, RAYLEIGH, ChannelRng(3), dtype=torch.float64)
    assert abs(float((real.h.abs() ** 2).mean()) - 1.0) < 0.01
    # circular symmetry: independent re / im halves of equal power
    assert abs(float((real.h.real ** 2).mean()) - 0.5) < 0.01
    assert abs(float((real.h.real * real.h.imag).mean())) < 0.01


def test_awgn_h_all_ones():
    real = draw_realization((2, 5), 3.0, AWGN, ChannelRng(0))
    assert torch.all(real.h == 1)


def test_noise_split_per_component():
    real = draw_realization((1, 1_000_000), 0.0, AWGN, ChannelRng(4), dtype=torch.float64)
    assert abs(float((real.noise.real ** 2).mean()) - 0.5) < 0.01
    assert abs(float((real.noise.imag ** 2).mean()) - 0.5) < 0.01


def test_seed_reproducible_and_streams_independent():
    a = draw_realization((1, 64), 5.0, RAYLEIGH, ChannelRng(9))
    b = draw_realization((1, 64), 5.0, RAYLEIGH, ChannelRng(9))
    assert torch.equal(a.h, b.h) and torch.equal(a.noise, b.noise)
    # the fading stream does not shift the noise stream
    c = draw_realization((1, 64), 5.0, AWGN, ChannelRng(9))
    assert torch.equal(a.noise, c.noise)


def test_equalize_examples():
    y = torch.tensor([1.1 + 0j], dtype=torch.complex128)
    one = torch.ones(1, dtype=torch.complex128)
    assert torch.allclose(equalize(y, ChannelRealization(one, 0.1, AWGN)), torch.tensor([1.0 + 0j], dtype=torch.complex128))
    assert torch.allclose(equalize(y, ChannelRealization(one, 0.0, AWGN)), y)
    two = 2 * one
    assert torch.allclose(equalize(y, ChannelRealization(two, 0.0, RAYLEIGH)), y / 2)


def test_equalize_zero_h_is_defined():
    out = equalize(torch.tensor([0.3 + 0.1j]), ChannelRealization(torch.zeros(1, dtype=torch.complex64), 0.5, RAYLEIGH))
    assert torch.all(torch.isfinite(out.real)) and out.abs().item() == 0


def test_equalize_none_and_mismatch():
    y = torch.randn(4, dtype=torch.complex64)
    real = ChannelRealization(torch.ones(3, dtype=torch.complex64), 0.1, AWGN)
    assert equalize(y, real, "none") is y
    with pytest.raises(ValueError):
        equalize(y, real)


def test_from_symbols():
    assert torch.equal(from_symbols(torch.tensor([1 + 2j])), torch.tensor([1.0, 2.0]))
    assert from_symbols(torch.randn(3, 5, dtype=torch.complex64)).shape == (3, 10)


def test_symbol_roundtrip_unit_power():
    x = torch.randn(3, 40, dtype=torch.float64)
    x = x / torch.sqrt((x ** 2).sum(-1, keepdim=True) / 20)
    assert torch.allclose(from_symbols(to_symbols(x)), x, atol=1e-12)


def test_gradient_through_channel_with_frozen_draws():
    torch.manual_seed(0)
    x = torch.randn(1, 12, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 12, dtype=torch.float64)
    real = draw_realization((1, 6), 3.0, RAYLEIGH, ChannelRng(5), dtype=torch.float64)

    def loss():
        rx = equalize(apply_channel(to_symbols(x), real), real)
        return (from_symbols(rx) * w).sum()

    loss().backward()
    for i in range(12):
        fd = central_difference(loss, x.data, (0, i))
        assert x.grad[0, i].item() == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_transmit_pathwise_gradient_equals_fixed_draw_gradient():
    x = torch.randn(1, 12, dtype=torch.float64, requires_grad=True)
    frame = to_symbols(x)
    received, real = transmit(frame, 4.0, RAYLEIGH, ChannelRng(1))
    from_symbols(received).sum().backward()
    g1 = x.grad.clone()
    x.grad = None
    from_symbols(apply_channel(to_symbols(x), real)).sum().backward()
    assert torch.equal(g1, x.grad)


def test_dump_trace(tmp_path):
    frame = to_symbols(torch.randn(1, 6))
    received, real = transmit(frame, 5.0, RAYLEIGH, ChannelRng(0))
    dump_trace(tmp_path / "t.csv", frame, real, received)
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["index", "re_y", "im_y", "re_h", "im_h", "re_yhat", "im_yhat"]
    assert len(rows) == 4
    assert float(rows[1][1]) == pytest.approx(frame[0, 0].real.item())
