"""Offline stand-in for CIFAR-10: 32x32 tiles of the photographs bundled with scikit-image.

Used when the real CIFAR-10 binaries are not available. The result is written
in the CIFAR-10 binary layout so it goes through exactly the same loader.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import CIFAR_SIDE, encode_cifar

PHOTOS = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field", "retina", "immunohistochemistry")
SCALES = (1, 2, 3, 4, 6)
MIN_STD = 0.03


def _photos():
    import skimage.data

    return [(name, getattr(skimage.data, name)()) for name in PHOTOS]


def tile_photos(seed: int = 0) -> np.ndarray:
    """All low-detail-filtered 32x32 uint8 tiles across photos and downscale factors, shuffled."""
    tiles = []
    for _, img in _photos():
        img = img[..., :3]
        for s in SCALES:
            h, w = img.shape[0] // s, img.shape[1] // s
            small = np.asarray(Image.fromarray(img).resize((w, h), Image.BOX))
            for top in range(0, h - CIFAR_SIDE + 1, CIFAR_SIDE):
                for left in range(0, w - CIFAR_SIDE + 1, CIFAR_SIDE):
                    t = small[top:top + CIFAR_SIDE, left:left + CIFAR_SIDE]
                    if t.std() / 255.0 >= MIN_STD:
                        tiles.append(t)
    tiles = np.stack(tiles)
    return tiles[np.random.default_rng(seed).permutation(len(tiles))]


def write_surrogate(directory, n_train: int = 2000, n_test: int = 500, seed: int = 0) -> tuple[Path, Path]:
    """Write ``train.bin`` and ``test.bin`` (disjoint tiles) in CIFAR-10 binary format."""
    tiles = tile_photos(seed)
    if n_train + n_test > len(tiles):
        raise ValueError(f"only {len(tiles)} tiles available, {n_train + n_test} requested")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train, test = directory / "train.bin", directory / "test.bin"
    train.write_bytes(encode_cifar(tiles[:n_train]))
    test.write_bytes(encode_cifar(tiles[n_train:n_train + n_test]))
    return train, test
