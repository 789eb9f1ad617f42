"""Dataset acquisition: synthetic Gaussians, IDX image files, feature CSVs,
splits, and poison initialization.

All randomness flows through PCG64 streams (with Box-Muller on top for the
Gaussian draws) so splits and poison inits are bitwise reproducible across
platforms; the algorithm identifier is recorded in experiment outputs.
"""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np

from .types import Dataset, PoisonBatch

RNG_ALGORITHM = "numpy-pcg64-boxmuller"

SYNTH_MU0 = np.array([-3.0, 0.0])
SYNTH_MU1 = np.array([3.0, 0.0])
SYNTH_COV_DIAG = np.array([2.5, 1.5])

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard normals by Box-Muller over the uniform stream."""
    k = (n + 1) // 2
    u1 = 1.0 - rng.random(k)  # (0, 1]: keeps log() finite
    u2 = rng.random(k)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                        r * np.sin(2.0 * np.pi * u2)])
    return z[:n]


def _gaussian_class(rng, count: int, mu: np.ndarray) -> np.ndarray:
    z = standard_normal(rng, count * 2).reshape(count, 2)
    return mu + z * np.sqrt(SYNTH_COV_DIAG)


def gen_synthetic(n_train: int, n_val: int, seed: int) -> tuple[Dataset, Dataset]:
    """Two bivariate Gaussians: class 0 at (-3, 0), class 1 at (3, 0), both
    with covariance diag(2.5, 1.5). Counts are split evenly per class."""
    if n_train % 2 or n_val % 2:
        raise ValueError("per-class counts must be even")
    rng = rng_for(seed)

    def draw(total: int) -> Dataset:
        half = total // 2
        X = np.vstack([_gaussian_class(rng, half, SYNTH_MU0),
                       _gaussian_class(rng, half, SYNTH_MU1)])
        y = np.repeat([0, 1], half)
        return Dataset(X, y)

    return draw(n_train), draw(n_val)


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_exact(f, nbytes: int, path, what: str) -> bytes:
    offset = f.tell()
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise IdxFormatError(
            f"{path}: truncated {what}: wanted {nbytes} bytes at offset "
            f"{offset}, got {len(buf)}")
    return buf


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, path, "magic"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{path}: bad image magic at offset 0: expected "
                f"{IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}")
        n, rows, cols = struct.unpack(">III", _read_exact(f, 12, path, "dims"))
        raw = _read_exact(f, n * rows * cols, path, "pixel payload")
        extra = f.read(1)
        if extra:
            raise IdxFormatError(f"{path}: {len(extra)}+ trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, path, "magic"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{path}: bad label magic at offset 0: expected "
                f"{IDX_LABELS_MAGIC:#010x}, found {magic:#010x}")
        n, = struct.unpack(">I", _read_exact(f, 4, path, "count"))
        raw = _read_exact(f, n, path, "label payload")
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx(images_path, labels_path, class_a: int, class_b: int) -> Dataset:
    """Two-class slice of an IDX image/label pair: class_a -> 0, class_b -> 1,
    pixels scaled into [0, 1]. Images are flattened row-major."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    keep = (labels == class_a) | (labels == class_b)
    X = images[keep].astype(np.float64) / 255.0
    y = (labels[keep] == class_b).astype(np.int64)
    return Dataset(X, y)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Fixture writer: uint8 images (n, rows, cols) and labels (n,)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise ValueError("expected images (n, rows, cols) and labels (n,)")
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray  # floored at 1e-12


def load_feature_csv(path, normalize: bool = False,
                     stats: FeatureStats | None = None
                     ) -> tuple[Dataset, FeatureStats | None]:
    """Numeric CSV with the label in the last column. With normalize=True the
    features are standardized; pass the returned stats when loading val/test
    so only training statistics are ever used."""
    rows = []
    width = None
    with open(path, newline="") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                try:
                    [float(c) for c in cells]
                except ValueError:
                    continue  # header row
            if len(cells) != width:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric cell ({e})")
    if not rows or width < 2:
        raise CsvFormatError(f"{path}: no data rows with features + label")
    arr = np.array(rows)
    X, y = arr[:, :-1], arr[:, -1]
    if not np.isin(y, (0.0, 1.0)).all():
        bad = y[~np.isin(y, (0.0, 1.0))][0]
        raise CsvFormatError(f"{path}: label {bad!r} outside {{0, 1}}")
    if stats is not None:
        X = (X - stats.mean) / stats.std
    elif normalize:
        stats = FeatureStats(X.mean(axis=0),
                             np.maximum(X.std(axis=0), 1e-12))
        X = (X - stats.mean) / stats.std
    return Dataset(X, y.astype(np.int64)), stats


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    seed: int = 0
    balanced: bool = True


def split_dataset(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle then (train, val, remainder) partition; balanced splits
    keep per-class counts within 1 of each other."""
    if spec.n_train + spec.n_val > d.n:
        raise ValueError(
            f"split {spec.n_train}+{spec.n_val} exceeds {d.n} available rows")
    rng = rng_for(spec.seed)
    if not spec.balanced:
        order = rng.permutation(d.n)
        a, b = spec.n_train, spec.n_train + spec.n_val
        return d.subset(order[:a]), d.subset(order[a:b]), d.subset(order[b:])
    idx0 = rng.permutation(np.flatnonzero(d.labels == 0))
    idx1 = rng.permutation(np.flatnonzero(d.labels == 1))
    t0 = spec.n_train - spec.n_train // 2  # class 0 takes the odd one out
    t1 = spec.n_train // 2
    v0 = spec.n_val - spec.n_val // 2
    v1 = spec.n_val // 2
    if t0 + v0 > idx0.size or t1 + v1 > idx1.size:
        raise ValueError(
            f"not enough per-class rows for a balanced {spec.n_train}/"
            f"{spec.n_val} split ({idx0.size} vs {idx1.size} available)")
    train = d.subset(np.concatenate([idx0[:t0], idx1[:t1]]))
    val = d.subset(np.concatenate([idx0[t0:t0 + v0], idx1[t1:t1 + v1]]))
    rest = d.subset(np.concatenate([idx0[t0 + v0:], idx1[t1 + v1:]]))
    return train, val, rest


def init_poison(val: Dataset, n_p: int, seed: int,
                box: tuple = (-np.inf, np.inf)) -> PoisonBatch:
    """n_p validation rows cloned without replacement, labels flipped."""
    if n_p > val.n:
        raise ValueError(f"cannot draw {n_p} poison points from {val.n} validation rows")
    rng = rng_for(seed)
    picked = rng.permutation(val.n)[:n_p]
    lo, hi = box
    return PoisonBatch(val.features[picked].copy(), 1 - val.labels[picked],
                       box_lo=lo, box_hi=hi)
