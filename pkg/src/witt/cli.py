"""Command-line front end: ``witt train | eval | transmit | sweep``.

Every command resolves its configuration (flag > ``--config`` file > preset),
hashes it, and writes into ``<out>/<verb>-<hash[:12]>/``. Identical arguments
therefore land in the same directory and reproduce the same bytes.

Exit codes: 0 success, 2 usage or configuration error, 3 training divergence.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import config as C
from .channel import ChannelRng
from .checkpoint import CheckpointError, load_model, save_model
from .codec import PRESETS, WITT, cbr, symbol_count
from .data import (
    ImageBatch,
    MalformedDatasetError,
    list_images,
    random_crop,
    read_cifar,
    read_image,
    write_image,
)
from .metrics import ms_ssim_per_image, num_scales, psnr
from .report import line_plot
from .training import (
    TrainConfig,
    TrainingDiverged,
    derive_seed,
    evaluate,
    format_metrics_csv,
    train_phase,
    write_metrics_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
DATA_ENV = "JSCC_DATA_DIR"
SURROGATE_DIR = "witt-surrogate-cifar"


class UsageError(Exception):
    pass


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    train: np.ndarray
    test: np.ndarray
    source: str


def _data_root() -> Optional[Path]:
    root = os.environ.get(DATA_ENV)
    return Path(root) if root else None


def _cifar_dir_splits(d: Path) -> Optional[tuple[list[Path], list[Path]]]:
    train = sorted(d.glob("data_batch_*.bin")) or sorted(d.glob("train*.bin"))
    test = sorted(d.glob("test_batch*.bin")) or sorted(d.glob("test*.bin"))
    if not train and not test:
        others = sorted(d.glob("*.bin"))
        if not others:
            return None
        return others, others
    return (train or test), (test or train)


def _read_bins(files: Sequence[Path], limit: Optional[int]) -> np.ndarray:
    arrays, total = [], 0
    for f in files:
        arrays.append(read_cifar(f))
        total += len(arrays[-1])
        if limit is not None and total >= limit:
            break
    out = np.concatenate(arrays)
    return out[:limit] if limit is not None else out


def _surrogate(root: Optional[Path]) -> Path:
    from .surrogate import write_surrogate

    base = (root or Path.home() / ".cache" / "witt") / SURROGATE_DIR
    if not (base / "train.bin").exists() or not (base / "test.bin").exists():
        write_surrogate(base, n_train=4445, n_test=500, seed=0)
    return base


def _crops(path: Path, size: int, seed: int, limit: Optional[int]) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for f in list_images(path)[:limit]:
        img = read_image(f).data[0]
        if min(img.shape[:2]) < size:
            warnings.warn(f"skipping {f.name}: smaller than crop {size}")
            continue
        out.append(random_crop(img, size, rng)[0])
    if not out:
        raise UsageError(f"no image in {path} is at least {size}x{size}")
    return np.stack(out)


def load_dataset(source: str, data_cfg: dict, seed: int) -> Dataset:
    """Resolve ``--dataset``: ``cifar`` (JSCC_DATA_DIR, else the bundled-photo stand-in),
    a CIFAR ``.bin`` file or directory, or a directory of PNG/PPM images."""
    root = _data_root()
    n_train, n_eval = data_cfg.get("n_train"), data_cfg.get("n_eval")
    if source == "cifar":
        for d in ([root, root / "cifar-10-batches-bin"] if root else []):
            if d.is_dir() and sorted(d.glob("data_batch_*.bin")):
                tr, te = _cifar_dir_splits(d)
                return Dataset(_read_bins(tr, n_train), _read_bins(te, n_eval), f"cifar:{d}")
        d = _surrogate(root)
        _say(f"note: CIFAR-10 binaries not found under ${DATA_ENV}; using photo-tile stand-in at {d}")
        return Dataset(_read_bins([d / "train.bin"], n_train), _read_bins([d / "test.bin"], n_eval), "cifar-surrogate")
    path = Path(source)
    if not path.exists() and root is not None and not path.is_absolute() and (root / path).exists():
        path = root / path
    if not path.exists():
        raise UsageError(f"dataset path does not exist: {source}")
    if path.is_file():
        images = _read_bins([path], None)
        return Dataset(images[:n_train], images[:n_eval], f"cifar-file:{path.name}")
    splits = _cifar_dir_splits(path)
    if splits is not None:
        return Dataset(_read_bins(splits[0], n_train), _read_bins(splits[1], n_eval), f"cifar-dir:{path.name}")
    size = int(data_cfg["crop_size"])
    return Dataset(_crops(path, size, derive_seed(seed, 11), n_train),
                   _crops(path, size, derive_seed(seed, 12), n_eval), f"images:{path.name}")


# ---------------------------------------------------------------- helpers

def parse_grid(text: Optional[str]) -> Optional[list[float]]:
    """``"1,4,7"`` or inclusive ``"start:stop:step"``."""
    if text is None:
        return None
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad SNR grid {text!r}: use '1,4,7' or 'start:stop:step'") from None


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    snr = g("snr")
    grid = parse_grid(g("snr_grid"))
    return {
        "preset": g("preset"),
        "seed": g("seed"),
        "train": {
            "channel": g("channel"), "metric": g("metric"), "learning_rate": g("lr"),
            "batch_size": g("batch_size"), "epochs_phase1": g("epochs"), "epochs_phase2": g("epochs"),
            "snr_range_db": [snr, snr] if snr is not None and args.command == "train" else None,
        },
        "data": {"dataset": g("dataset"), "n_train": g("n_train"), "n_eval": g("n_eval")},
        "eval": {
            "channel": g("channel"), "equalization": g("equalization"), "metric": g("metric"),
            "snr_grid": grid, "snr": snr, "repetitions": g("repetitions"),
        },
    }


def _resolve(args) -> tuple[dict, Optional[str]]:
    file_cfg = C.load_file(args.config) if args.config else {}
    return C.resolve(file_cfg, _overrides(args)), (str(args.config) if args.config else None)


def _run_dir(out: str, verb: str, digest: str) -> Path:
    d = Path(out) / f"{verb}-{digest[:12]}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(run: Path, manifest: dict, digest: str, resolved: dict) -> None:
    C.dump(resolved, run / "config.yaml")
    C.dump({**manifest, "manifest_sha256": digest}, run / "manifest.yaml")


def _load_checkpoint(path) -> tuple[WITT, dict]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    try:
        model, _, meta = load_model(p)
    except CheckpointError as exc:
        raise UsageError(f"{p}: {exc}") from exc
    return model, meta


def _model_for(cfg: dict, checkpoint: Optional[str], check_config: bool) -> tuple[WITT, dict]:
    """Load a checkpoint, checking its model section against the resolved config if asked."""
    if checkpoint is None:
        model = WITT(C.model_config(cfg), seed=cfg["seed"])
        return model, {"model_sha256": C.model_hash(model.config)}
    model, meta = _load_checkpoint(checkpoint)
    if check_config:
        want = C.model_hash(C.model_config(cfg))
        have = C.model_hash(model.config)
        if want != have:
            raise UsageError(
                f"checkpoint {checkpoint} model hash {have[:12]} does not match the configuration's {want[:12]}"
            )
    return model, meta


def _eval_records(model, images, cfg, grid, seed):
    ev = cfg["eval"]
    if images.shape[1] % model.config.multiple or images.shape[2] % model.config.multiple:
        raise UsageError(f"evaluation images {images.shape[1]}x{images.shape[2]} are not divisible by "
                         f"{model.config.multiple}")
    return evaluate(model, images, grid, kind=ev["channel"], seed=seed, repetitions=int(ev["repetitions"]),
                    batch_size=int(ev["batch_size"]), equalization=ev["equalization"])


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg, cfg_path = _resolve(args)
    tr = cfg["train"]
    phases = [args.phase] if args.phase else [1, 2]
    steps = None
    if args.steps is not None:
        if args.steps < len(phases):
            raise UsageError(f"--steps must be at least {len(phases)}")
        first = math.ceil(args.steps / len(phases))
        steps = [first, args.steps - first][:len(phases)]
    manifest = {"command": "train", "config": cfg, "phases": phases, "steps": args.steps,
                "init_checkpoint": args.checkpoint}
    digest = C.content_hash(manifest)
    data = load_dataset(cfg["data"]["dataset"], cfg["data"], cfg["seed"])
    multiple = C.model_config(cfg).multiple
    if data.train.shape[1] % multiple or data.train.shape[2] % multiple:
        raise UsageError(f"training images {data.train.shape[1]}x{data.train.shape[2]} not divisible by {multiple}")

    if args.checkpoint:
        model, _ = _model_for(cfg, args.checkpoint, check_config=True)
    else:
        model = WITT(C.model_config(cfg), seed=cfg["seed"])
    run = _run_dir(args.out, "train", digest)
    ckdir = run / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    meta = {"manifest_sha256": digest, "model_sha256": C.model_hash(model.config), "dataset": data.source}
    n_batches = math.ceil(len(data.train) / tr["batch_size"])
    phase_records = {}
    with open(run / "train.log", "w") as log:
        for i, phase in enumerate(phases):
            epochs = int(tr[f"epochs_phase{phase}"])
            max_steps = None
            if steps is not None:
                max_steps = steps[i]
                epochs = math.ceil(max_steps / n_batches)
            tc = TrainConfig(phase=phase, learning_rate=tr["learning_rate"], batch_size=tr["batch_size"],
                             epochs=epochs, max_steps=max_steps, snr_range_db=tr["snr_range_db"],
                             seed=cfg["seed"], loss="msssim" if tr["metric"] == "msssim" else "mse",
                             channel=tr["channel"], equalization=cfg["eval"]["equalization"])
            try:
                train_phase(model, data.train, tc, checkpoint_dir=ckdir, log=log, meta=meta)
            except TrainingDiverged as exc:
                _say(f"error: training diverged: {exc}")
                return EXIT_DIVERGED
            if len(phases) == 2 and phase == 1:
                phase_records[1] = _eval_records(model, data.test, cfg, cfg["eval"]["snr_grid"], cfg["seed"])
    save_model(run / "final.ckpt", model, {**meta, "phases": phases})
    records = _eval_records(model, data.test, cfg, cfg["eval"]["snr_grid"], cfg["seed"])
    write_metrics_csv(records, run / "metrics.csv", digest)
    if 1 in phase_records:
        write_metrics_csv(phase_records[1], run / "metrics_phase1.csv", digest)
    manifest.update({"config_file": cfg_path, "dataset_source": data.source,
                     "checkpoints": sorted(str(p.relative_to(run)) for p in ckdir.glob("*.ckpt")) + ["final.ckpt"]})
    _write_manifest(run, manifest, digest, cfg)
    print(run)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, cfg_path = _resolve(args)
    model, meta = _model_for(cfg, args.checkpoint, check_config=bool(args.config or args.preset))
    manifest = {"command": "eval", "eval": cfg["eval"], "data": cfg["data"], "seed": cfg["seed"],
                "checkpoint_manifest": meta.get("manifest_sha256"), "model_sha256": C.model_hash(model.config),
                "checkpoint": args.checkpoint}
    digest = C.content_hash(manifest)
    data = load_dataset(cfg["data"]["dataset"], cfg["data"], cfg["seed"])
    records = _eval_records(model, data.test, cfg, cfg["eval"]["snr_grid"], cfg["seed"])
    run = _run_dir(args.out, "eval", digest)
    write_metrics_csv(records, run / "metrics.csv", digest)
    _write_manifest(run, {**manifest, "config_file": cfg_path, "dataset_source": data.source}, digest, cfg)
    print(run)
    return EXIT_OK


def cmd_transmit(args) -> int:
    cfg, cfg_path = _resolve(args)
    if args.checkpoint is None:
        _say("note: no --checkpoint given; transmitting with untrained weights")
    model, meta = _model_for(cfg, args.checkpoint, check_config=bool(args.config or args.preset))
    if not Path(args.image).is_file():
        raise UsageError(f"image not found: {args.image}")
    batch = read_image(args.image)
    h, w = batch.data.shape[1:3]
    m = model.config.multiple
    if h % m or w % m:
        raise UsageError(f"image is {h}x{w}; height and width must be divisible by {m}")
    ev = cfg["eval"]
    snr = ev["snr"]
    manifest = {"command": "transmit", "image": str(args.image), "snr": snr, "channel": ev["channel"],
                "equalization": ev["equalization"], "noiseless": bool(args.noiseless), "seed": cfg["seed"],
                "checkpoint_manifest": meta.get("manifest_sha256"), "model_sha256": C.model_hash(model.config)}
    digest = C.content_hash(manifest)
    x = torch.from_numpy(batch.data)
    with torch.no_grad():
        x_hat = model(x, snr, kind=ev["channel"], rng=ChannelRng(derive_seed(cfg["seed"], 21)),
                      equalization=ev["equalization"], noiseless=args.noiseless).clamp(0, 1)
    run = _run_dir(args.out, "transmit", digest)
    out_png = run / "reconstruction.png"
    write_image(ImageBatch(x_hat.numpy()), out_png)
    k = symbol_count(model.config, h, w)
    ratio = cbr(model.config)
    value = psnr(x.double(), x_hat.double())
    try:
        num_scales(min(h, w))
        ssim_text = f"{float(ms_ssim_per_image(x.double(), x_hat.double())[0]):.6f}"
    except ValueError:
        ssim_text = "nan"
    _write_manifest(run, {**manifest, "config_file": cfg_path, "output": out_png.name}, digest, cfg)
    print(f"cbr={float(ratio):.6g} ({ratio}) k={k} psnr={value:.4f} msssim={ssim_text}")
    print(out_png)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.checkpoints:
        raise UsageError("sweep needs at least one --checkpoints entry")
    cfg, cfg_path = _resolve(args)
    ev = cfg["eval"]
    loaded = [(p, *_load_checkpoint(p)) for p in args.checkpoints]
    manifest = {"command": "sweep", "eval": ev, "data": cfg["data"], "seed": cfg["seed"],
                "checkpoints": [[str(p), meta.get("manifest_sha256"), C.model_hash(m.config)] for p, m, meta in loaded],
                "plot": bool(args.plot)}
    digest = C.content_hash(manifest)
    data = load_dataset(cfg["data"]["dataset"], cfg["data"], cfg["seed"])

    rows = []
    for path, model, _ in loaded:
        rec = _eval_records(model, data.test, cfg, [ev["snr"]], cfg["seed"])[0]
        rows.append((Fraction(cbr(model.config)), str(path), rec, model))
    rows.sort(key=lambda r: r[0])
    keys, seen = [], {}
    for ratio, *_ in rows:
        seen[ratio] = seen.get(ratio, 0) + 1
        keys.append(str(ratio) if seen[ratio] == 1 else f"{ratio}#{seen[ratio]}")
    dups = sorted({str(r) for r, n in seen.items() if n > 1})
    if dups:
        _say(f"warning: duplicate cbr values {dups}; later rows get a #n suffix")
    run = _run_dir(args.out, "sweep", digest)
    text = format_metrics_csv([r[2] for r in rows], digest,
                              extra_columns={"key": keys, "checkpoint": [r[1] for r in rows]})
    (run / "sweep.csv").write_text(text)
    if args.plot:
        metric = ev["metric"]
        pick = (lambda r: r.psnr_db) if metric == "psnr" else (lambda r: r.msssim_db)
        ylabel = "PSNR (dB)" if metric == "psnr" else "MS-SSIM (dB)"
        line_plot({f"SNR {ev['snr']:g} dB": [(float(r[0]), pick(r[2])) for r in rows]}, run / "metric_vs_cbr.svg",
                  title=f"{ylabel} versus CBR", xlabel="CBR", ylabel=ylabel)
        series = {}
        for key, (_, _, _, model) in zip(keys, rows):
            recs = _eval_records(model, data.test, cfg, ev["snr_grid"], cfg["seed"])
            series[f"cbr {key}"] = [(r.snr_db, pick(r)) for r in recs]
        line_plot(series, run / "metric_vs_snr.svg", title=f"{ylabel} versus SNR", xlabel="SNR (dB)", ylabel=ylabel)
    _write_manifest(run, {**manifest, "config_file": cfg_path, "dataset_source": data.source}, digest, cfg)
    print(run)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="YAML run configuration (flags override it)")
    shared.add_argument("--preset", choices=sorted(PRESETS))
    shared.add_argument("--dataset", help=f"'cifar' (resolved under ${DATA_ENV}), a CIFAR .bin file/dir, "
                                          "or an image directory")
    shared.add_argument("--channel", choices=C.CHANNELS)
    shared.add_argument("--snr", type=float, help="SNR in dB (train: fixes the training SNR)")
    shared.add_argument("--snr-grid", help="evaluation grid, '1,4,7' or 'start:stop:step'")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--out", default="runs", help="root directory for run folders (default: runs)")
    shared.add_argument("--equalization", choices=C.EQUALIZERS)
    shared.add_argument("--metric", choices=C.METRICS)
    shared.add_argument("--n-train", type=int, help="use at most this many training images")
    shared.add_argument("--n-eval", type=int, help="use at most this many evaluation images")
    shared.add_argument("--repetitions", type=int, help="channel draws per image per SNR")

    p = argparse.ArgumentParser(prog="witt", description="Train, evaluate and exercise the wireless image codec.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[shared], help="two-phase training")
    t.add_argument("--steps", type=int, help="total optimizer steps, split evenly across the phases run")
    t.add_argument("--phase", type=int, choices=(1, 2), help="run a single phase")
    t.add_argument("--checkpoint", help="initialize from this checkpoint (e.g. phase 1 output for --phase 2)")
    t.add_argument("--epochs", type=int, help="epochs per phase")
    t.add_argument("--lr", type=float, help="Adam learning rate")
    t.add_argument("--batch-size", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[shared], help="metrics over an SNR grid")
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("transmit", parents=[shared], help="send one image through the channel")
    x.add_argument("--checkpoint")
    x.add_argument("--image", required=True)
    x.add_argument("--noiseless", action="store_true", help="bypass the channel")
    x.set_defaults(func=cmd_transmit)

    s = sub.add_parser("sweep", parents=[shared], help="compare checkpoints by CBR at one SNR")
    s.add_argument("--checkpoints", nargs="*", default=[])
    s.add_argument("--plot", action="store_true", help="also write SVG plots")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, C.ConfigError, MalformedDatasetError, FileNotFoundError) as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
