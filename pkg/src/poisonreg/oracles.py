"""Independent baselines: k-fold CV for lambda, retraining finite-difference
hypergradients, and single-poison error/lambda surfaces over a 2-D probe box.

These deliberately avoid the reverse-mode machinery: the finite-difference
hypergradient perturbs one coordinate at a time and retrains the full inner
problem, and the surfaces retrain per grid cell with the deterministic
full-batch trainer so SGD noise never enters a verification path.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_math import data_loss
from .hypergrad import merge_poison
from .lr_model import SgdConfig, test_error, train_gd_traced, train_sgd
from .types import Dataset, HyperParams, ModelState, PoisonBatch, concat_datasets

Trainer = Callable[[Dataset, HyperParams], ModelState]


@dataclass(frozen=True)
class GridSpec:
    """Lambda grid plus the 2-D probe box for surface scans."""

    lambda_values: tuple[float, ...]
    box: tuple[tuple[float, float], tuple[float, float]] = ((-9.5, 9.5), (-9.5, 9.5))
    resolution: int = 50

    def __post_init__(self):
        lv = tuple(float(v) for v in self.lambda_values)
        if not lv:
            raise ValueError("lambda grid must be nonempty")
        if any(b >= a for a, b in zip(lv[1:], lv[:-1])):
            raise ValueError("lambda grid must be strictly increasing")
        if self.resolution < 0:
            raise ValueError("resolution must be >= 0")
        object.__setattr__(self, "lambda_values", lv)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        (xlo, xhi), (ylo, yhi) = self.box
        xs = np.linspace(xlo, xhi, self.resolution)
        ys = np.linspace(ylo, yhi, self.resolution)
        return xs, ys


def make_gd_trainer(eta: float, T: int) -> Trainer:
    """Deterministic full-batch trainer from zero init, as surfaces expect."""
    def trainer(d: Dataset, h: HyperParams) -> ModelState:
        return train_gd_traced(d, h, None, eta, T).final
    return trainer


def cross_validate_lambda(train: Dataset, grid: GridSpec, k: int,
                          sgd: SgdConfig, selection: str = "error") -> float:
    """Grid value minimizing the mean k-fold validation error; ties go to the
    smallest lambda. Folds are contiguous blocks of a seeded shuffle."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if train.n < k:
        raise ValueError(f"need at least k={k} samples, got {train.n}")
    if selection not in ("error", "xent"):
        raise ValueError(f"unknown selection criterion {selection!r}")
    rng = np.random.Generator(np.random.PCG64(sgd.seed))
    order = rng.permutation(train.n)
    folds = np.array_split(order, k)
    mean_scores = []
    for lam in grid.lambda_values:
        h = HyperParams(lam)
        scores = []
        for i in range(k):
            held = folds[i]
            rest = np.concatenate([folds[j] for j in range(k) if j != i])
            model = train_sgd(train.subset(rest), h, sgd)
            fold_d = train.subset(held)
            scores.append(test_error(fold_d, model) if selection == "error"
                          else data_loss(fold_d, model))
        mean_scores.append(np.mean(scores))
    return grid.lambda_values[int(np.argmin(mean_scores))]


def finite_diff_hypergrad(train: Dataset, poison: PoisonBatch, val: Dataset,
                          h: HyperParams, w0: ModelState | None, eta: float,
                          T: int, step: float = 1e-4) -> tuple[np.ndarray, float]:
    """Central differences of the retrain-then-evaluate pipeline, one inner
    training per perturbed coordinate. This is the arbiter for rmd_hypergrad."""
    if step <= 0:
        raise ValueError("step must be > 0")

    def pipeline(features: np.ndarray, lam: float) -> float:
        merged, _ = merge_poison(train, poison.with_features(features))
        trace = train_gd_traced(merged, h.with_lambda(lam), w0, eta, T)
        return data_loss(val, trace.final)

    X0 = np.array(poison.features)
    grad_xp = np.zeros_like(X0)
    for k in range(X0.shape[0]):
        for c in range(X0.shape[1]):
            Xp, Xm = X0.copy(), X0.copy()
            Xp[k, c] += step
            Xm[k, c] -= step
            grad_xp[k, c] = (pipeline(Xp, h.log_lambda)
                             - pipeline(Xm, h.log_lambda)) / (2 * step)
    grad_lambda = (pipeline(X0, h.log_lambda + step)
                   - pipeline(X0, h.log_lambda - step)) / (2 * step)
    return grad_xp, grad_lambda


def _probe_datasets(train: Dataset, grid: GridSpec, poison_label: int):
    if train.m != 2:
        raise ValueError("surface scans need a 2-feature dataset")
    xs, ys = grid.cell_centers()
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            probe = Dataset(np.array([[x, y]]), np.array([poison_label]))
            yield iy, ix, concat_datasets(train, probe)


def error_surface(train: Dataset, val: Dataset, grid: GridSpec, lam: float,
                  trainer: Trainer, poison_label: int = 1) -> np.ndarray:
    """Validation error of the model retrained with one poison point per
    cell, at fixed lambda. Rows index y, columns index x."""
    h = HyperParams(lam)
    out = np.zeros((grid.resolution, grid.resolution))
    for iy, ix, poisoned in _probe_datasets(train, grid, poison_label):
        out[iy, ix] = test_error(val, trainer(poisoned, h))
    return out


def lambda_surface(train: Dataset, val: Dataset, grid: GridSpec,
                   trainer: Trainer, poison_label: int = 1
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Per cell: the grid lambda minimizing validation error for that poison
    placement (ties to the smallest lambda) and the error it achieves."""
    best_lam = np.zeros((grid.resolution, grid.resolution))
    best_err = np.zeros((grid.resolution, grid.resolution))
    for iy, ix, poisoned in _probe_datasets(train, grid, poison_label):
        errs = [test_error(val, trainer(poisoned, HyperParams(lam)))
                for lam in grid.lambda_values]
        j = int(np.argmin(errs))
        best_lam[iy, ix] = grid.lambda_values[j]
        best_err[iy, ix] = errs[j]
    return best_lam, best_err


def write_surface_csv(path, surface: np.ndarray, grid: GridSpec, kind: str,
                      lam: float | None = None):
    """CSV grid: metadata header row, then one row per y index."""
    (xlo, xhi), (ylo, yhi) = grid.box
    meta = (f"# kind={kind} xlo={xlo} xhi={xhi} ylo={ylo} yhi={yhi} "
            f"resolution={grid.resolution}")
    if lam is not None:
        meta += f" lambda={lam!r}"
    with open(path, "w", newline="") as f:
        f.write(meta + "\n")
        writer = csv.writer(f)
        for row in surface:
            writer.writerow([repr(float(v)) for v in row])


def read_surface_csv(path) -> tuple[np.ndarray, dict]:
    with open(path) as f:
        header = f.readline().strip().lstrip("# ")
        meta = dict(kv.split("=", 1) for kv in header.split())
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    return np.array(rows), meta
