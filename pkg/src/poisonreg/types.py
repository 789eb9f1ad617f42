"""Shared domain types used across the attack pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, m) with binary labels in {0, 1}.

    Arrays are frozen after construction so instances can be shared freely
    between threads. n == 0 is allowed (penalty-only training problems).
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(
                f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    if a.n == 0:
        return b
    if b.n == 0:
        return a
    if a.m != b.m:
        raise ValueError(f"feature width mismatch: {a.m} vs {b.m}")
    return Dataset(np.concatenate([a.features, b.features]),
                   np.concatenate([a.labels, b.labels]))


@dataclass(frozen=True)
class ModelState:
    """Logistic-regression parameters: weight vector plus separate bias."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise ValueError("non-finite model parameters")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def stacked(self) -> np.ndarray:
        """(m+1,) vector: weights followed by the bias."""
        return np.append(self.weights, self.bias)

    @staticmethod
    def zeros(m: int) -> "ModelState":
        return ModelState(np.zeros(m), 0.0)

    @staticmethod
    def from_stacked(v: np.ndarray) -> "ModelState":
        v = np.asarray(v, dtype=np.float64)
        return ModelState(v[:-1], float(v[-1]))


@dataclass(frozen=True)
class HyperParams:
    """Log-space regularization strength; the penalty multiplier is e^log_lambda.

    feasible_range is the closed projection interval for the attack loops;
    penalize_bias includes the bias in the L2 penalty (ablation switch, off
    by default: decision boundaries stay affine-equivariant).
    """

    log_lambda: float
    feasible_range: tuple[float, float] = (-math.inf, math.inf)
    penalize_bias: bool = False

    def __post_init__(self):
        lo, hi = self.feasible_range
        if lo > hi:
            raise ValueError(f"empty feasible range [{lo}, {hi}]")
        if not math.isfinite(self.log_lambda):
            raise ValueError("log_lambda must be finite")

    @property
    def multiplier(self) -> float:
        return math.exp(self.log_lambda)

    def with_lambda(self, log_lambda: float) -> "HyperParams":
        return HyperParams(log_lambda, self.feasible_range, self.penalize_bias)


@dataclass(frozen=True)
class PoisonBatch:
    """Attacker-controlled feature block with labels fixed at construction.

    box_lo/box_hi are the per-feature clamp bounds; every projection keeps
    features inside them. Labels are never modified after construction.
    """

    features: np.ndarray
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]
    box_lo: np.ndarray = field(default=None)  # type: ignore[assignment]
    box_hi: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"poison features must be 2-D, got {X.shape}")
        m = X.shape[1]
        y = np.zeros(X.shape[0], dtype=np.int64) if self.labels is None \
            else np.asarray(self.labels).astype(np.int64)
        if y.shape != (X.shape[0],) or (y.size and not np.isin(y, (0, 1)).all()):
            raise ValueError("poison labels must be a {0,1} vector, one per row")
        lo = np.full(m, -np.inf) if self.box_lo is None \
            else np.broadcast_to(np.asarray(self.box_lo, dtype=np.float64), (m,)).copy()
        hi = np.full(m, np.inf) if self.box_hi is None \
            else np.broadcast_to(np.asarray(self.box_hi, dtype=np.float64), (m,)).copy()
        if (lo > hi).any():
            raise ValueError("poison box has lo > hi")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "box_lo", _readonly(lo))
        object.__setattr__(self, "box_hi", _readonly(hi))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def with_features(self, X: np.ndarray) -> "PoisonBatch":
        return PoisonBatch(X, self.labels, self.box_lo, self.box_hi)

    def slice(self, start: int, stop: int) -> "PoisonBatch":
        return PoisonBatch(self.features[start:stop], self.labels[start:stop],
                           self.box_lo, self.box_hi)

    def as_dataset(self) -> Dataset:
        return Dataset(self.features, self.labels)
