"""Logistic-regression trainers.

Two deliberately distinct regimes:

* train_gd_traced: deterministic full-batch gradient descent that records
  every intermediate state, so a reverse sweep can differentiate through it.
* train_sgd: seeded shuffled mini-batch SGD, used to evaluate attacks the
  same way a defender would actually train.

Both cap the step size at STEP_SAFETY / (e^lambda + data curvature): plain
gradient steps diverge once eta exceeds 2 over the loss curvature, and the
penalty contributes curvature e^lambda, so any fixed eta becomes unstable
for large enough regularization. The cap is inactive wherever the requested
eta is already stable, and the step actually used is recorded in the trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import curvature_bound, sigmoid
from .types import Dataset, HyperParams, ModelState, _readonly

STEP_SAFETY = 1.5  # keep eta * max curvature below this (< 2 for stability)


def stable_eta(eta: float, d: Dataset, h: HyperParams) -> float:
    return min(eta, STEP_SAFETY / (h.multiplier + curvature_bound(d)))


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters (learning rate too large)."""

    def __init__(self, step: int, context: str = "gradient descent"):
        super().__init__(f"non-finite loss/parameters at {context} step {step}")
        self.step = step


@dataclass(frozen=True)
class SgdConfig:
    """Mini-batch SGD settings for attack evaluation."""

    eta_tr: float
    batch_size: int
    epochs: int
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class TrainTrace:
    """Full-batch GD trajectory: params[t] stacks (weights, bias) at step t.

    params has shape (T+1, m+1); replaying forward from params[0] with the
    same data reproduces params[T] bitwise.
    """

    params: np.ndarray
    eta: float
    lambda_used: float

    def __post_init__(self):
        object.__setattr__(self, "params", _readonly(np.asarray(self.params)))

    @property
    def T(self) -> int:
        return self.params.shape[0] - 1

    def state(self, t: int) -> ModelState:
        return ModelState.from_stacked(self.params[t])

    @property
    def final(self) -> ModelState:
        return self.state(self.T)


def _gd_step(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
             mult: float, penalize_bias: bool, eta: float):
    # mirrors core_math.grad_w exactly so traces replay bitwise
    n = X.shape[0]
    if n > 0:
        r = sigmoid(X @ w + b) - y
        gw = X.T @ r / n
        gb = float(r.mean())
    else:
        gw = np.zeros_like(w)
        gb = 0.0
    gw = gw + mult * w
    if penalize_bias:
        gb += mult * b
    return w - eta * gw, b - eta * gb


def train_gd_traced(d: Dataset, h: HyperParams, w0: ModelState | None,
                    eta: float, T: int, stabilize: bool = True) -> TrainTrace:
    """Full-batch descent for T steps, keeping all T+1 states for the reverse sweep.

    stabilize=False takes the requested eta verbatim (and diverges when it
    exceeds the curvature limit)."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if w0 is None:
        w0 = ModelState.zeros(d.m)
    if d.m != w0.m:
        raise ValueError(f"dataset has {d.m} features but w0 has {w0.m} weights")
    if stabilize:
        eta = stable_eta(eta, d, h)
    X, y = d.features, d.labels
    params = np.empty((T + 1, d.m + 1))
    w, b = w0.weights.copy(), w0.bias
    params[0, :-1], params[0, -1] = w, b
    for t in range(T):
        w, b = _gd_step(X, y, w, b, h.multiplier, h.penalize_bias, eta)
        if not (np.isfinite(w).all() and np.isfinite(b)):
            raise DivergenceError(t + 1)
        params[t + 1, :-1], params[t + 1, -1] = w, b
    return TrainTrace(params, eta, h.log_lambda)


def train_sgd(d: Dataset, h: HyperParams, cfg: SgdConfig,
              w0: ModelState | None = None, stabilize: bool = True) -> ModelState:
    """Shuffled mini-batch SGD from zero init (seeded, bitwise reproducible)."""
    if d.n == 0:
        raise ValueError("cannot run SGD on an empty dataset")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    X, y = d.features, d.labels
    w = np.zeros(d.m) if w0 is None else w0.weights.copy()
    b = 0.0 if w0 is None else w0.bias
    mult = h.multiplier
    eta = stable_eta(cfg.eta_tr, d, h) if stabilize else cfg.eta_tr
    for epoch in range(cfg.epochs):
        order = rng.permutation(d.n)
        for start in range(0, d.n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb = X[idx]
            r = sigmoid(Xb @ w + b) - y[idx]
            gw = Xb.T @ r / idx.size + mult * w
            gb = float(r.mean())
            if h.penalize_bias:
                gb += mult * b
            w = w - eta * gw
            b = b - eta * gb
        if not (np.isfinite(w).all() and np.isfinite(b)):
            raise DivergenceError(epoch, context="SGD epoch")
    return ModelState(w, b)


def test_error(d: Dataset, s: ModelState) -> float:
    """0-1 error with the tie p == 0.5 classified as 1."""
    if d.n == 0:
        raise ValueError("test_error of an empty dataset is undefined")
    if d.m != s.m:
        raise ValueError(f"dataset has {d.m} features but model has {s.m} weights")
    pred = sigmoid(d.features @ s.weights + s.bias) >= 0.5
    return float(np.mean(pred != (d.labels == 1)))


def weight_norm_sq(s: ModelState) -> float:
    """||w||^2 with the bias excluded, mirroring the penalty."""
    return float(s.weights @ s.weights)
