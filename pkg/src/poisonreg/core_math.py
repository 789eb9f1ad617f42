"""Logistic-regression loss family: loss, exact gradients, Hessian-vector products.

Everything here is a pure function of its inputs. The binary cross-entropy is
sample-averaged so the regularization strength is comparable across dataset
sizes. The Hessian-vector products use the closed forms for the logistic loss
(no autodiff), never materializing the (m+1)x(m+1) Hessian:

    H_data v = (1/n) X~^T (p(1-p) * (X~ v))        with X~ = [X | 1]
    (d/dX_p dL/dw)^T v, row k = (1/n) [ s_k (x~_k . v) w + (p_k - y_k) v_w ]
    (d/dlam dL/dw)^T v = e^lam (w . v_w)

plus e^lam v on the weight block for the penalty. All cost O(n m) time and
O(m) extra space.
"""
from __future__ import annotations

import numpy as np

from .types import Dataset, HyperParams, ModelState

PROB_EPS = 1e-12  # clamp for log() in the loss; gradients use the exact p


def sigmoid(z):
    """Numerically stable logistic function, elementwise; scalars stay scalar."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


def _check_dims(d: Dataset, s: ModelState):
    if d.m != s.m:
        raise ValueError(f"dataset has {d.m} features but model has {s.m} weights")


def _probs(d: Dataset, s: ModelState) -> np.ndarray:
    return sigmoid(d.features @ s.weights + s.bias)


def data_loss(d: Dataset, s: ModelState) -> float:
    """Mean binary cross-entropy; probabilities clamped to [1e-12, 1 - 1e-12]."""
    _check_dims(d, s)
    if d.n == 0:
        raise ValueError("data_loss of an empty dataset is undefined")
    p = np.clip(_probs(d, s), PROB_EPS, 1.0 - PROB_EPS)
    y = d.labels
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def penalty(s: ModelState, h: HyperParams) -> float:
    sq = float(s.weights @ s.weights)
    if h.penalize_bias:
        sq += s.bias * s.bias
    return 0.5 * h.multiplier * sq


def regularized_loss(d: Dataset, s: ModelState, h: HyperParams) -> float:
    """data_loss + (e^lambda / 2) ||w||^2, bias excluded unless h.penalize_bias."""
    return data_loss(d, s) + penalty(s, h)


def grad_w(d: Dataset, s: ModelState, h: HyperParams | None) -> tuple[np.ndarray, float]:
    """Exact gradient of the (regularized) loss w.r.t. (weights, bias).

    h=None gives the unregularized data-loss gradient (used for the outer
    validation objective). An empty dataset contributes zero data gradient,
    which makes penalty-only training loops well defined.
    """
    _check_dims(d, s)
    if d.n == 0:
        gw = np.zeros(s.m)
        gb = 0.0
    else:
        r = _probs(d, s) - d.labels  # (p - y)
        gw = d.features.T @ r / d.n
        gb = float(r.mean())
    if h is not None:
        gw = gw + h.multiplier * s.weights
        if h.penalize_bias:
            gb += h.multiplier * s.bias
    return gw, gb


def grad_w_stacked(d: Dataset, s: ModelState, h: HyperParams | None) -> np.ndarray:
    gw, gb = grad_w(d, s, h)
    return np.append(gw, gb)


def hvp_ww(d: Dataset, s: ModelState, h: HyperParams, v: np.ndarray) -> np.ndarray:
    """Hessian of regularized_loss w.r.t. (weights, bias), applied to v (m+1,)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (s.m + 1,):
        raise ValueError(f"v must have shape ({s.m + 1},), got {v.shape}")
    _check_dims(d, s)
    vw, vb = v[:-1], v[-1]
    out = np.zeros(s.m + 1)
    if d.n > 0:
        p = _probs(d, s)
        sv = p * (1.0 - p)
        t = sv * (d.features @ vw + vb)
        out[:-1] = d.features.T @ t / d.n
        out[-1] = t.sum() / d.n
    out[:-1] += h.multiplier * vw
    if h.penalize_bias:
        out[-1] += h.multiplier * vb
    return out


def hvp_xp_w(full_train: Dataset, poison_idx, s: ModelState, v: np.ndarray) -> np.ndarray:
    """Mixed second derivative (d/dX_p d/dw of the data loss)^T v.

    poison_idx selects the attacker-owned rows of full_train; the output has
    one row of length m per poison row. The L2 penalty does not depend on
    X_p, so the result is independent of lambda.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (s.m + 1,):
        raise ValueError(f"v must have shape ({s.m + 1},), got {v.shape}")
    _check_dims(full_train, s)
    idx = np.arange(full_train.n)[poison_idx]
    if idx.size and (idx.min() < 0 or idx.max() >= full_train.n):
        raise IndexError("poison indices out of range")
    vw, vb = v[:-1], v[-1]
    Xp = full_train.features[idx]
    zp = Xp @ s.weights + s.bias
    pp = sigmoid(zp)
    sp = pp * (1.0 - pp)
    resid = pp - full_train.labels[idx]
    inner = Xp @ vw + vb  # x~_k . v
    n = full_train.n
    return (np.outer(sp * inner, s.weights) + np.outer(resid, vw)) / n


def hvp_lambda_w(s: ModelState, h: HyperParams, v: np.ndarray) -> float:
    """(d/dlambda d/dw of the regularized loss)^T v = e^lambda (w . v_w)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (s.m + 1,):
        raise ValueError(f"v must have shape ({s.m + 1},), got {v.shape}")
    out = h.multiplier * float(s.weights @ v[:-1])
    if h.penalize_bias:
        out += h.multiplier * s.bias * v[-1]
    return out


def curvature_bound(d: Dataset, iters: int = 12) -> float:
    """Estimate of the largest eigenvalue of the data-loss Hessian, i.e. of
    (1/4n) X~^T X~ (the sigmoid slope never exceeds 1/4), by deterministic
    power iteration. Used to keep gradient steps inside the stable region."""
    if d.n == 0:
        return 0.0
    X = d.features
    v = np.ones(d.m + 1) / np.sqrt(d.m + 1)
    rayleigh = 0.0
    for _ in range(iters):
        t = X @ v[:-1] + v[-1]
        u = np.append(X.T @ t, t.sum())
        rayleigh = float(v @ u)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
    # 15% headroom for power-iteration underestimation
    return 1.15 * rayleigh / (4.0 * d.n)
