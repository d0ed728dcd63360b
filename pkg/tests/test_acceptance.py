"""Acceptance suite: one test per criterion, each reporting a PASS / FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
pytest terminal summary under "acceptance criteria".

Criterion 5 trains the tiny preset twice from the command line (about four
minutes per run on one CPU core). It uses real CIFAR-10 if ``JSCC_DATA_DIR``
holds the binaries and the photo-tile stand-in otherwise.
"""
import math
import os
import subprocess
import sys
import time
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

import conftest
from conftest import fd_check
from witt.backbone import (
    PatchDivide,
    PatchMerge,
    SwinBlock,
    WindowAttention,
    init_weights,
    shift_attention_mask,
    swin_block_pair,
    window_partition,
    window_reverse,
)
from witt.channel import AWGN, RAYLEIGH, ChannelRng, apply_channel, draw_realization, equalize, measured_snr_db
from witt.channel import to_symbols, transmit
from witt.cli import load_dataset
from witt.codec import PRESETS, WITT, cbr, count_params, preset, symbol_count
from witt.metrics import PSNR_CAP_DB, loss_mse, loss_msssim, ms_ssim, msssim_to_db, psnr
from witt.modnet import ChannelModNet, modnet_forward
from witt.training import evaluate, read_metrics_csv

PARAM_TARGET = 28.2e6
DESK = {
    "preset": "tiny",
    "seed": 0,
    "train": {"learning_rate": 1e-3, "batch_size": 32, "epochs_phase1": 10, "epochs_phase2": 10,
              "snr_range_db": [1.0, 13.0], "channel": "awgn", "metric": "psnr"},
    "data": {"dataset": "cifar", "n_train": 2000, "n_eval": 500},
    "eval": {"snr_grid": [1.0, 4.0, 7.0, 10.0, 13.0], "repetitions": 5, "channel": "awgn",
             "equalization": "mmse"},
}


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _perturb(module, scale, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


# ---------------------------------------------------------------- 1


def test_criterion_1_structural_invariants(double):
    t0 = time.perf_counter()
    failures = []

    def check(name, cond):
        if not bool(cond):
            failures.append(name)

    rng = np.random.default_rng(0)
    for _ in range(50):
        window = int(rng.choice([1, 2, 4, 8]))
        b, gh, gw, c = (int(v) for v in rng.integers(1, 4, size=4))
        x = torch.rand(b, gh * window, gw * window, c)
        check("partition/reverse bijection",
              torch.equal(window_reverse(window_partition(x, window), window, *x.shape[1:3]), x))

    merge, divide = PatchMerge(8, 12), PatchDivide(12, 8)
    init_weights(merge)
    init_weights(divide)
    x = torch.randn(2, 8, 8, 8)
    check("merge shape", merge(x).shape == (2, 4, 4, 12))
    check("divide shape", divide(merge(x)).shape == x.shape)
    # d(output token)/d(input token) support: merge reads exactly its 2x2 block, divide writes from one token
    jac = torch.autograd.functional.jacobian(lambda v: merge(v).sum(-1), x[:1]).abs().sum(-1)[0, :, :, 0]
    for i, j in [(0, 0), (1, 3), (3, 2)]:
        support = sorted((jac[i, j] > 0).nonzero().tolist())
        check("merge locality", support == sorted([2 * i + u, 2 * j + v] for u in (0, 1) for v in (0, 1)))
    y = torch.randn(1, 4, 4, 12)
    jac = torch.autograd.functional.jacobian(lambda v: divide(v).sum(-1), y).abs().sum(-1)[0, :, :, 0]
    for i, j in [(0, 0), (5, 2), (7, 7)]:
        check("divide locality", (jac[i, j] > 0).nonzero().tolist() == [[i // 2, j // 2]])

    a, b = SwinBlock(16, 2, 4), SwinBlock(16, 2, 4, shifted=True)
    for blk in (a, b):
        for p in blk.parameters():
            torch.nn.init.zeros_(p)
        for m in blk.modules():
            if isinstance(m, torch.nn.LayerNorm):
                torch.nn.init.ones_(m.weight)
    x = torch.randn(2, 8, 8, 16)
    check("residual identity under zero weights", torch.equal(swin_block_pair(x, a, b), x))

    attn = WindowAttention(16, 4, 4)
    init_weights(attn)
    torch.nn.init.normal_(attn.relative_position_bias_table)
    for mask in (None, shift_attention_mask(8, 8, 4, 2)):
        _, w = attn.attention(window_partition(torch.randn(2, 8, 8, 16), 4), mask)
        check("softmax rows sum to 1", torch.allclose(w.sum(-1), torch.ones(()), atol=1e-6))

    net = ChannelModNet(16)
    _perturb(net, 0.2, 1)
    for shape in [(3, 16), (2, 5, 16), (2, 4, 4, 16)]:
        check("ModNet shape preservation", net(torch.randn(shape, dtype=torch.float64), 7.0).shape == shape)
    for snr in np.linspace(-5, 25, 7):
        for g in net.gates(float(snr), 2):
            check("gate range (0,1)", torch.all(g > 0) and torch.all(g < 1))

    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    report(1, ok, f"structural invariants, {len(set(failures))} failing kinds {sorted(set(failures))}, "
                  f"{elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_gradients(double):
    t0 = time.perf_counter()
    results = {}

    torch.manual_seed(0)
    a, b = SwinBlock(16, 2, 2), SwinBlock(16, 2, 2, shifted=True)
    for blk in (a, b):
        init_weights(blk)
        _perturb(blk, 0.3, 2)
    x = torch.randn(2, 8, 8, 16)
    readout = torch.randn(2, 8, 8, 16)
    params = {**{"a." + k: v for k, v in a.named_parameters()}, **{"b." + k: v for k, v in b.named_parameters()}}
    rep = fd_check(lambda: (swin_block_pair(x, a, b) * readout).sum(), params, coords_per_tensor=4)
    results["swin_block_pair"] = (max(e for e, _ in rep.values()), 1e-4)

    net = ChannelModNet(12, hidden=16)
    _perturb(net, 0.3, 3)
    feats, readout = torch.randn(2, 6, 12), torch.randn(2, 6, 12)
    rep = fd_check(lambda: (modnet_forward(feats, 4.5, net) * readout).sum(), dict(net.named_parameters()),
                   coords_per_tensor=4)
    results["modnet_forward"] = (max(e for e, _ in rep.values()), 1e-4)

    model = WITT(preset("tiny"), seed=4)
    _perturb(model, 0.05, 4)
    img = torch.rand(1, 32, 32, 3)
    k = symbol_count(model.config, 32, 32)
    real = draw_realization((1, k), 6.0, RAYLEIGH, ChannelRng(8), dtype=torch.float64)

    def codec_loss():
        frame = model.encode(img, 6.0)
        return loss_mse(img, model.decode(equalize(apply_channel(frame, real), real), 6.0, (32, 32)))

    rep = fd_check(codec_loss, dict(model.named_parameters()), coords_per_tensor=2)
    results["end-to-end tiny codec"] = (max(e for e, _ in rep.values()), 1e-3)

    ref = torch.rand(1, 32, 32, 3)
    noisy = (ref + 0.05 * torch.randn(1, 32, 32, 3)).clamp(0, 1).requires_grad_(True)
    rep = fd_check(lambda: loss_msssim(ref, noisy), {"image": noisy}, coords_per_tensor=16)
    results["loss_msssim"] = (rep["image"][0], 1e-3)

    elapsed = time.perf_counter() - t0
    ok = all(err <= tol for err, tol in results.values()) and elapsed < 300
    detail = ", ".join(f"{k} relerr {e:.1e} (<= {t:g})" for k, (e, t) in results.items())
    report(2, ok, f"{detail}; {elapsed:.1f}s (< 300s)")


# ---------------------------------------------------------------- 3


def test_criterion_3_channel_calibration():
    t0 = time.perf_counter()
    frame = to_symbols(torch.randn(1, 2_000_000, dtype=torch.float64))
    errs = {}
    for kind in (AWGN, RAYLEIGH):
        _, real = transmit(frame, 10.0, kind, ChannelRng(21))
        errs[kind] = measured_snr_db(frame, real) - 10.0
    h = draw_realization((1, 1_000_000), 10.0, RAYLEIGH, ChannelRng(22), dtype=torch.float64).h
    h_power = float((h.abs() ** 2).mean())
    received, real = transmit(frame[:, :1000], math.inf, AWGN, ChannelRng(0))
    identity = torch.equal(equalize(received, real), frame[:, :1000])
    elapsed = time.perf_counter() - t0
    ok = all(abs(e) <= 0.1 for e in errs.values()) and abs(h_power - 1) <= 0.01 and identity and elapsed < 60
    report(3, ok, f"SNR error awgn {errs[AWGN]:+.4f} dB, rayleigh {errs[RAYLEIGH]:+.4f} dB (|.| <= 0.1); "
                  f"E|h|^2 = {h_power:.4f} (1 +/- 0.01); noiseless MMSE identity {identity}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 4


def test_criterion_4_cbr_accounting():
    checks = []
    with torch.no_grad():
        for name, hw, want in (("cifar2stage", (32, 32), Fraction(1, 3)), ("hires4stage", (256, 256), Fraction(1, 16))):
            model = WITT(PRESETS[name], seed=0)
            frame = model.encode(torch.rand(1, *hw, 3), 10.0)
            expected = want * hw[0] * hw[1] * 3
            checks.append((name, cbr(model.config), want, frame.shape[-1], expected, frame.is_complex()))
    ok = all(got == want and n == expected and cplx for _, got, want, n, expected, cplx in checks)
    report(4, ok, "; ".join(f"{name}: cbr {got} (want {want}), {n} complex symbols (want {expected})"
                            for name, got, want, n, expected, _ in checks))


# ---------------------------------------------------------------- 6


def test_criterion_6_metric_identities():
    rng = np.random.default_rng(0)
    x = torch.from_numpy(rng.random((2, 32, 32, 3)))
    y = (x + 0.05 * torch.from_numpy(rng.standard_normal(x.shape))).clamp(0, 1)
    psnr_gap = abs(psnr(x, y) - (-10 * math.log10(float(loss_mse(x, y)))))
    self_ssim = abs(float(ms_ssim(x, x)) - 1)
    big = torch.from_numpy(rng.random((1, 160, 192, 3)))
    self_ssim = max(self_ssim, abs(float(ms_ssim(big, big)) - 1))
    db = msssim_to_db(0.9)
    ok = psnr_gap < 1e-9 and self_ssim <= 1e-6 and db == pytest.approx(10.0, abs=1e-12) \
        and msssim_to_db(1.0) == PSNR_CAP_DB
    report(6, ok, f"|psnr + 10 log10 mse| = {psnr_gap:.1e}; |ms_ssim(x,x) - 1| = {self_ssim:.1e}; "
                  f"msssim_to_db(0.9) = {db:.12f} dB")


# ---------------------------------------------------------------- 8


def test_criterion_8_parameter_count_soft():
    n = count_params(WITT(PRESETS["hires4stage"]))
    rel = n / PARAM_TARGET - 1
    inside = abs(rel) <= 0.15
    status = "inside" if inside else "OUTSIDE"
    line = (f"criterion 8: {'PASS' if inside else 'SOFT-FAIL (review, not a hard failure)'}  hires4stage has "
            f"{n / 1e6:.2f}M parameters, {rel:+.1%} vs 28.2M, {status} the +/-15% band")
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    if not inside:
        warnings.warn(line)


# ---------------------------------------------------------------- 5 and 7


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Two identical command-line training runs of the desk-scale configuration."""
    root = tmp_path_factory.mktemp("desk")
    env = dict(os.environ, OMP_NUM_THREADS="1", MKL_NUM_THREADS="1")
    env.setdefault("JSCC_DATA_DIR", str(root / "data"))
    Path(env["JSCC_DATA_DIR"]).mkdir(parents=True, exist_ok=True)
    cfg_path = root / "desk.yaml"
    cfg_path.write_text(yaml.safe_dump(DESK))
    runs = []
    for tag in ("a", "b"):
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "witt.cli", "train", "--config", str(cfg_path), "--out",
                               str(root / tag)], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        runs.append((Path(proc.stdout.strip().splitlines()[-1]), time.perf_counter() - t0))
    return runs, env["JSCC_DATA_DIR"]


def _psnr_by_snr(path):
    return {float(r["snr_db"]): float(r["psnr_db"]) for r in read_metrics_csv(path)}


@pytest.mark.slow
def test_criterion_5_desk_training_trend(desk_runs, monkeypatch):
    runs, data_dir = desk_runs
    run, seconds = runs[0]
    monkeypatch.setenv("JSCC_DATA_DIR", data_dir)
    phase2 = _psnr_by_snr(run / "metrics.csv")
    phase1 = _psnr_by_snr(run / "metrics_phase1.csv")
    grid = sorted(phase2)

    data = load_dataset("cifar", {"n_train": 0, "n_eval": DESK["data"]["n_eval"]}, DESK["seed"])
    baseline = evaluate(WITT(preset(DESK["preset"]), seed=DESK["seed"]), data.test, [10.0], seed=DESK["seed"],
                        repetitions=DESK["eval"]["repetitions"])[0].psnr_db
    gain = phase2[10.0] - baseline
    ok_a = gain >= 6.0

    drops = [phase2[lo] - phase2[hi] for lo, hi in zip(grid, grid[1:]) if phase2[hi] < phase2[lo]]
    ok_b = len(drops) == 0 or (len(drops) == 1 and drops[0] <= 0.1)

    worst2, worst1 = min(phase2.values()), min(phase1.values())
    ok_c = worst2 >= worst1

    n_train = len(load_dataset("cifar", {"n_train": DESK["data"]["n_train"], "n_eval": 1}, 0).train)
    budget_ok = seconds <= 4 * 3600 and n_train >= 2000
    curve = " ".join(f"{s:g}:{phase2[s]:.2f}" for s in grid)
    report(5, ok_a and ok_b and ok_c and budget_ok,
           f"(a) {phase2[10.0]:.2f} dB trained vs {baseline:.2f} dB random at 10 dB, gain {gain:.2f} (>= 6) "
           f"{'ok' if ok_a else 'FAIL'}; (b) PSNR by SNR {curve}, {len(drops)} drop(s) {'ok' if ok_b else 'FAIL'}; "
           f"(c) worst-case phase 2 {worst2:.2f} vs phase 1 {worst1:.2f} dB {'ok' if ok_c else 'FAIL'}; "
           f"{n_train} training images, {seconds / 60:.1f} min CPU")


@pytest.mark.slow
def test_criterion_7_reproducibility(desk_runs):
    (a, _), (b, _) = desk_runs[0]
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in ("metrics.csv", "metrics_phase1.csv")}
    report(7, all(same.values()), "two desk runs with identical seeds: " +
           ", ".join(f"{k} {'byte-identical' if v else 'DIFFER'}" for k, v in same.items()))
