"""Deterministic MNIST-stand-in used when no real IDX files are available.

Real MNIST cannot be downloaded in the offline test environment, so the
image-scale tests run on this surrogate: 28x28 grayscale blobs, a ring for
digit "0" and a double ring for digit "8", with per-sample jitter, intensity
variation and pixel noise. Classes overlap enough that a linear model makes
some clean errors and poisoning has room to hurt. Files are written through
write_idx and include a third junk class so load_idx's class filter is
exercised. Set POISONREG_MNIST_DIR to a directory with the real
train-images-idx3-ubyte / train-labels-idx1-ubyte / t10k-* files to run the
same tests against actual MNIST.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from poisonreg.data_io import rng_for, write_idx

SIZE = 28
NOISE_SIGMA = 0.22


def _ring(cx: float, cy: float, radius: float, width: float) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return np.exp(-((dist - radius) / width) ** 2)


def _sample(rng: np.random.Generator, digit: int) -> np.ndarray:
    cx = 13.5 + rng.uniform(-3.0, 3.0)
    cy = 13.5 + rng.uniform(-3.0, 3.0)
    scale = rng.uniform(0.35, 1.0)
    if digit == 0:
        img = _ring(cx, cy, rng.uniform(4.8, 8.5), rng.uniform(1.6, 3.2))
    elif digit == 8:
        r = rng.uniform(2.6, 4.6)
        img = (_ring(cx, cy - r, r, rng.uniform(1.3, 2.4))
               + _ring(cx, cy + r, r, rng.uniform(1.3, 2.4)))
    else:  # junk class: vertical bar, must be filtered out by the loader
        img = np.zeros((SIZE, SIZE))
        col = int(rng.integers(10, 18))
        img[4:24, col:col + 3] = 1.0
    img = scale * np.clip(img, 0.0, 1.0)
    if rng.random() < 0.10:  # washed-out sample: nearly class-uninformative
        img = 0.2 * img + rng.uniform(0.05, 0.3)
    img = img + rng.normal(0.0, float(NOISE_SIGMA), size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_images(counts: dict[int, int], seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = rng_for(seed)
    images, labels = [], []
    for digit, count in sorted(counts.items()):
        for _ in range(count):
            images.append(_sample(rng, digit))
            labels.append(digit)
    order = rng.permutation(len(labels))
    images = np.round(np.array(images)[order] * 255).astype(np.uint8)
    return images, np.array(labels, dtype=np.uint8)[order]


def write_surrogate(out_dir) -> dict[str, Path]:
    """Pool of 1400 usable images (+100 junk) and a fixed 900-image test set."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    pool_imgs, pool_labels = make_images({0: 700, 8: 700, 3: 100}, seed=20210201)
    write_idx(pool_imgs.reshape(-1, SIZE, SIZE), pool_labels,
              paths["train_images"], paths["train_labels"])
    test_imgs, test_labels = make_images({0: 450, 8: 450, 3: 30}, seed=20210202)
    write_idx(test_imgs.reshape(-1, SIZE, SIZE), test_labels,
              paths["test_images"], paths["test_labels"])
    return paths


def mnist_paths(tmp_dir) -> tuple[dict[str, Path], bool]:
    """(paths, is_real): real MNIST from POISONREG_MNIST_DIR when present,
    otherwise the surrogate written under tmp_dir."""
    env_dir = os.environ.get("POISONREG_MNIST_DIR")
    if env_dir:
        base = Path(env_dir)
        names = {
            "train_images": "train-images-idx3-ubyte",
            "train_labels": "train-labels-idx1-ubyte",
            "test_images": "t10k-images-idx3-ubyte",
            "test_labels": "t10k-labels-idx1-ubyte",
        }
        paths = {k: base / v for k, v in names.items()}
        if all(p.exists() or p.with_suffix(".gz").exists() for p in paths.values()):
            return ({k: (p if p.exists() else p.with_suffix(".gz"))
                     for k, p in paths.items()}, True)
    return write_surrogate(tmp_dir), False
