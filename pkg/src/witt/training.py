"""Two-phase end-to-end training and SNR-sweep evaluation.

Phase 1 trains everything except the two ModNets, which are bypassed.
Phase 2 re-initializes the ModNets and trains the whole model. Each step
draws a fresh SNR uniformly from the training range and a fresh channel
realization. All randomness is derived from ``(seed, phase, epoch)`` so a
run resumed from an epoch checkpoint replays the uninterrupted run exactly.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np
import torch

from .channel import AWGN, ChannelRng
from .checkpoint import load_tensors, load_module, save_model
from .codec import WITT, cbr as codec_cbr
from .metrics import LOSSES, msssim_to_db, ms_ssim_per_image, mse_to_psnr

_logger = logging.getLogger(__name__)

CSV_FIELDS = ("snr_db", "cbr", "psnr_db", "msssim", "msssim_db", "n_images", "seed")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: int = 1
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    max_steps: Optional[int] = None
    snr_range_db: Sequence[float] = (1.0, 13.0)
    seed: int = 0
    loss: str = "mse"
    betas: Sequence[float] = (0.9, 0.999)
    eps: float = 1e-8
    channel: str = AWGN
    equalization: Optional[str] = None

    def __post_init__(self):
        lo, hi = self.snr_range_db
        self.snr_range_db = (float(lo), float(hi))
        self.betas = tuple(float(b) for b in self.betas)
        if lo > hi:
            raise ValueError(f"SNR range lower bound {lo} exceeds upper bound {hi}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.phase not in (1, 2):
            raise ValueError("phase must be 1 or 2")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0] >> 1)


def sample_snr(snr_range: Sequence[float], rng: np.random.Generator) -> float:
    lo, hi = snr_range
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    steps: int = 0


def _adam_tensors(opt: torch.optim.Adam, named: list[tuple[str, torch.nn.Parameter]]) -> dict:
    out = {}
    for name, p in named:
        st = opt.state.get(p)
        if not st:
            continue
        out[f"optim.{name}.exp_avg"] = st["exp_avg"]
        out[f"optim.{name}.exp_avg_sq"] = st["exp_avg_sq"]
        out[f"optim.{name}.step"] = torch.as_tensor(st["step"], dtype=torch.float64).reshape(())
    return out


def _restore_adam(opt: torch.optim.Adam, named: list[tuple[str, torch.nn.Parameter]], tensors: dict) -> None:
    for name, p in named:
        key = f"optim.{name}.exp_avg"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(tensors[f"optim.{name}.step"])),
            "exp_avg": torch.from_numpy(np.array(tensors[key])).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(np.array(tensors[f"optim.{name}.exp_avg_sq"])).to(p.dtype),
        }


def _as_array(data) -> np.ndarray:
    if hasattr(data, "data") and not isinstance(data, np.ndarray):
        data = data.data
    if isinstance(data, (list, tuple)):
        data = np.concatenate([getattr(b, "data", b) for b in data])
    return np.asarray(data, dtype=np.float32)


def train_phase(
    model: WITT,
    data,
    config: TrainConfig,
    checkpoint_dir: Optional[Path] = None,
    log: Optional[TextIO] = None,
    resume: Optional[Path] = None,
    meta: Optional[dict] = None,
) -> TrainResult:
    """Run one training phase in place on ``model``.

    ``data`` is an (N, H, W, 3) array, an ImageBatch, or a list of ImageBatch.
    Writes ``phase{p}_epoch{e:03d}.ckpt`` into ``checkpoint_dir`` after each epoch.
    """
    images = _as_array(data)
    if config.phase == 1:
        model.use_modnet = False
        skip = model.modnet_parameter_names()
        named = [(n, p) for n, p in model.named_parameters() if n not in skip]
    else:
        model.use_modnet = True
        named = list(model.named_parameters())
    if config.phase == 2 and resume is None:
        for m in model.modnets():
            m.reset_parameters()
    opt = torch.optim.Adam([p for _, p in named], lr=config.learning_rate, betas=config.betas, eps=config.eps)
    loss_fn = LOSSES[config.loss]

    start_epoch, step = 0, 0
    if resume is not None:
        tensors, rmeta = load_tensors(resume)
        load_module(model, tensors, "model.")
        _restore_adam(opt, named, tensors)
        if int(rmeta.get("phase", config.phase)) != config.phase:
            raise ValueError("resume checkpoint is from a different phase")
        start_epoch = int(rmeta["epoch"]) + 1
        step = int(rmeta["step"])

    result = TrainResult(steps=step)
    if config.max_steps is not None and step >= config.max_steps:
        return result
    model.train()
    n = len(images)
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng(derive_seed(config.seed, config.phase, epoch, 0))
        chan = ChannelRng(derive_seed(config.seed, config.phase, epoch, 1))
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            x = torch.from_numpy(images[order[start:start + config.batch_size]])
            snr = sample_snr(config.snr_range_db, rng)
            x_hat = model(x, snr, kind=config.channel, rng=chan, equalization=config.equalization)
            loss = loss_fn(x, x_hat)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at phase {config.phase} epoch {epoch} step {step} (snr {snr:.3f} dB)"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            losses.append(value)
            result.step_losses.append(value)
            if log is not None:
                log.write(f"step={step} phase={config.phase} epoch={epoch} loss={value:.8f} snr={snr:.6f}\n")
        if losses:
            result.epoch_losses.append(float(np.mean(losses)))
            _logger.info("phase %d epoch %d: mean loss %.6g over %d steps", config.phase, epoch,
                         result.epoch_losses[-1], len(losses))
        if checkpoint_dir is not None:
            ck_meta = dict(meta or {})
            ck_meta.update({"phase": config.phase, "epoch": epoch, "step": step, "train_config": config.to_dict()})
            save_model(Path(checkpoint_dir) / f"phase{config.phase}_epoch{epoch:03d}.ckpt", model, ck_meta,
                       _adam_tensors(opt, named))
        if config.max_steps is not None and step >= config.max_steps:
            break
    result.steps = step
    model.eval()
    return result


def train_phase1(data, config: TrainConfig, codec: WITT, **kw) -> TrainResult:
    if config.phase != 1:
        raise ValueError("train_phase1 needs phase=1")
    return train_phase(codec, data, config, **kw)


def train_phase2(data, config: TrainConfig, codec_from_phase1: WITT, **kw) -> TrainResult:
    if config.phase != 2:
        raise ValueError("train_phase2 needs phase=2")
    return train_phase(codec_from_phase1, data, config, **kw)


@dataclass
class MetricRecord:
    snr_db: float
    cbr: float
    psnr_db: float
    msssim: float
    msssim_db: float
    n_images: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.msssim <= 1.0:
            raise ValueError(f"msssim {self.msssim} outside [0, 1]")


@torch.no_grad()
def evaluate(
    model,
    data,
    snr_list: Sequence[float],
    kind: str = AWGN,
    seed: int = 0,
    repetitions: int = 5,
    batch_size: int = 100,
    equalization: Optional[str] = None,
    noiseless: bool = False,
    cbr: Optional[float] = None,
) -> list[MetricRecord]:
    """PSNR / MS-SSIM averaged over images and ``repetitions`` channel draws per SNR.

    ``model`` is anything called as ``model(x, snr, kind=..., rng=..., equalization=..., noiseless=...)``.
    """
    images = _as_array(data)
    if cbr is None:
        cfg = getattr(model, "config", None)
        cbr = float(codec_cbr(cfg)) if cfg is not None else 0.0
    if hasattr(model, "eval"):
        model.eval()
    records = []
    for j, snr in enumerate(snr_list):
        chan = ChannelRng(derive_seed(seed, j, int(round(float(snr) * 1000))))
        psnrs, ssims = [], []
        for _ in range(repetitions):
            for start in range(0, len(images), batch_size):
                x = torch.from_numpy(images[start:start + batch_size])
                x_hat = model(x, float(snr), kind=kind, rng=chan, equalization=equalization,
                              noiseless=noiseless).clamp(0.0, 1.0)
                mse = ((x - x_hat) ** 2).flatten(1).mean(1).double()
                psnrs.extend(mse_to_psnr(float(m)) for m in mse)
                ssims.extend(ms_ssim_per_image(x.double(), x_hat.double()).tolist())
        msssim = float(np.mean(ssims))
        records.append(MetricRecord(
            snr_db=float(snr), cbr=float(cbr), psnr_db=float(np.mean(psnrs)), msssim=msssim,
            msssim_db=msssim_to_db(msssim), n_images=len(images), seed=int(seed),
        ))
    return records


def format_metrics_csv(records: Sequence[MetricRecord], manifest_hash: Optional[str] = None,
                       extra_columns: Optional[dict[str, Sequence]] = None) -> str:
    buf = io.StringIO()
    if manifest_hash:
        buf.write(f"# manifest_sha256={manifest_hash}\n")
    extra = extra_columns or {}
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(extra) + list(CSV_FIELDS))
    for i, r in enumerate(records):
        row = [col[i] for col in extra.values()]
        row += [f"{r.snr_db:.6g}", f"{r.cbr:.10g}", f"{r.psnr_db:.6f}", f"{r.msssim:.8f}",
                f"{r.msssim_db:.6f}", str(r.n_images), str(r.seed)]
        w.writerow(row)
    return buf.getvalue()


def write_metrics_csv(records, path, manifest_hash: Optional[str] = None, **kw) -> None:
    Path(path).write_text(format_metrics_csv(records, manifest_hash, **kw))


def read_metrics_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
