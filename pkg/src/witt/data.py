"""Image ingestion: CIFAR-10 binary batches, image directories, PNG output.

All images are held channels-last (batch, H, W, 3) as float32 in [0, 1].
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE  # label byte + R, G, B planes
IMAGE_SUFFIXES = (".png", ".ppm")


class MalformedDatasetError(ValueError):
    pass


@dataclass
class ImageBatch:
    """A batch of RGB images, ``data`` shaped (batch, H, W, 3) in [0, 1]."""

    data: np.ndarray
    source_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or self.data.shape[-1] != 3:
            raise ValueError(f"expected (batch, H, W, 3) data, got shape {self.data.shape}")
        if not self.source_ids:
            self.source_ids = [str(i) for i in range(len(self.data))]
        if len(self.source_ids) != len(self.data):
            raise ValueError("source_ids length does not match batch size")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image data contains non-finite values")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("image data outside [0, 1]")

    def __len__(self):
        return len(self.data)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def check_divisible(self, multiple: int) -> None:
        check_dims(self.height, self.width, multiple)


def check_dims(height: int, width: int, multiple: int) -> None:
    if height % multiple or width % multiple:
        raise ValueError(
            f"image dims {height}x{width} must be divisible by {multiple}"
        )


def to_unit(pixels: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0, 1]."""
    return pixels.astype(np.float32) / 255.0


def to_bytes(data: np.ndarray) -> np.ndarray:
    """[0, 1] -> uint8, round half up, clamped."""
    return np.clip(np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def decode_cifar(raw: bytes | np.ndarray) -> np.ndarray:
    """Decode CIFAR-10 binary records into uint8 images (n, 32, 32, 3); labels dropped."""
    buf = np.frombuffer(raw, dtype=np.uint8) if isinstance(raw, (bytes, bytearray)) else np.asarray(raw, np.uint8)
    if buf.size % CIFAR_RECORD:
        raise MalformedDatasetError(
            f"{buf.size} bytes is not a multiple of the {CIFAR_RECORD}-byte CIFAR record"
        )
    records = buf.reshape(-1, CIFAR_RECORD)
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    return np.ascontiguousarray(planes.transpose(0, 2, 3, 1))


def encode_cifar(images: np.ndarray, labels: Sequence[int] | None = None) -> bytes:
    """Inverse of :func:`decode_cifar` for uint8 (n, 32, 32, 3) images."""
    images = np.asarray(images, dtype=np.uint8)
    if images.shape[1:] != (CIFAR_SIDE, CIFAR_SIDE, 3):
        raise ValueError(f"CIFAR images must be 32x32x3, got {images.shape[1:]}")
    n = len(images)
    labels = np.zeros(n, np.uint8) if labels is None else np.asarray(labels, np.uint8)
    out = np.empty((n, CIFAR_RECORD), np.uint8)
    out[:, 0] = labels
    out[:, 1:] = images.transpose(0, 3, 1, 2).reshape(n, -1)
    return out.tobytes()


def cifar_files(path: str | Path) -> list[Path]:
    """A single .bin file, or the data_batch_*.bin files of an extracted CIFAR directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("data_batch_*.bin")) or sorted(path.glob("*.bin"))
        if not files:
            raise FileNotFoundError(f"no CIFAR .bin files under {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def read_cifar(path: str | Path, limit: int | None = None) -> np.ndarray:
    """All images of a CIFAR binary file (or directory) as float32 (n, 32, 32, 3)."""
    chunks = []
    total = 0
    for f in cifar_files(path):
        images = decode_cifar(f.read_bytes())
        chunks.append(images)
        total += len(images)
        if limit is not None and total >= limit:
            break
    images = np.concatenate(chunks) if chunks else np.zeros((0, 32, 32, 3), np.uint8)
    if limit is not None:
        images = images[:limit]
    return to_unit(images)


def load_cifar(path: str | Path, batch_size: int = 128, multiple: int | None = None) -> Iterator[ImageBatch]:
    """Stream CIFAR-10 binary records as batches, in file order."""
    offset = 0
    for f in cifar_files(path):
        images = decode_cifar(f.read_bytes())
        if multiple:
            check_dims(CIFAR_SIDE, CIFAR_SIDE, multiple)
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            ids = [f"{f.name}:{offset + start + i}" for i in range(len(chunk))]
            yield ImageBatch(to_unit(chunk), ids)
        offset += len(images)


def read_image(path: str | Path) -> ImageBatch:
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"))
    return ImageBatch(to_unit(pixels)[None], [str(path)])


def list_images(path: str | Path) -> list[Path]:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"not a directory: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no *.png / *.ppm images in {path}")
    return files


def random_crop(image: np.ndarray, size: int, rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int]]:
    """Uniform random ``size`` x ``size`` crop of an (H, W, 3) image; returns (crop, (top, left))."""
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return image[top:top + size, left:left + size], (top, left)


def load_image_dir(
    path: str | Path,
    crop_size: int,
    rng_seed: int,
    batch_size: int = 1,
    epochs: int = 1,
) -> Iterator[ImageBatch]:
    """Random crops from every image in a directory, one crop per image per epoch.

    Images smaller than ``crop_size`` are skipped with a warning.
    """
    files = list_images(path)
    rng = np.random.default_rng(rng_seed)
    crops, ids = [], []
    for _ in range(epochs):
        for f in files:
            with Image.open(f) as im:
                pixels = np.asarray(im.convert("RGB"))
            if min(pixels.shape[:2]) < crop_size:
                warnings.warn(f"skipping {f.name}: {pixels.shape[0]}x{pixels.shape[1]} < crop {crop_size}")
                continue
            crop, (top, left) = random_crop(pixels, crop_size, rng)
            crops.append(crop)
            ids.append(f"{f.name}@{top},{left}")
            if len(crops) == batch_size:
                yield ImageBatch(to_unit(np.stack(crops)), ids)
                crops, ids = [], []
    if crops:
        yield ImageBatch(to_unit(np.stack(crops)), ids)


def write_image(batch: ImageBatch, path: str | Path) -> list[Path]:
    """Write a batch as PNG. Multi-image batches get an ``_<i>`` suffix per image."""
    path = Path(path)
    pixels = to_bytes(batch.data)
    if len(pixels) == 1:
        targets = [path]
    else:
        targets = [path.with_name(f"{path.stem}_{i}{path.suffix or '.png'}") for i in range(len(pixels))]
    for target, img in zip(targets, pixels):
        Image.fromarray(img).save(target, format="PNG")
    return targets
