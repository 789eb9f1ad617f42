"""Hypergradients by reverse-mode differentiation of the traced training loop.

The forward pass runs full-batch gradient descent and stores every state
w^(0) .. w^(T). The reverse sweep then propagates the gradient of the
validation loss backwards through the update map

    w^(t+1) = w^(t) - eta * grad L(w^(t))

which needs one Hessian-vector product per step plus the mixed products
against the poison features and against log-lambda:

    dw^(T)   = grad_w L_val(w^(T)),  dX_p^(T) = 0,  dlam^(T) = 0
    dw^(t)   = dw^(t+1)   - eta * (H_ww(w^(t)) dw^(t+1))
    dX_p^(t) = dX_p^(t+1) - eta * (d/dX_p d/dw L)^T dw^(t+1)
    dlam^(t) = dlam^(t+1) - eta * (d/dlam d/dw L)^T dw^(t+1)

dX_p^(0) and dlam^(0) are the exact gradients of L_val(w^(T)) viewed as a
function of the poison features and of log-lambda. The validation loss is
unregularized. All adjoints are kept in float64.

When the trainers' stability cap binds (see lr_model), grad_lambda is the
gradient with the effective step held fixed; it stays a valid descent signal
but finite differences that retrain across the cap boundary will include the
extra step-size dependence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import data_loss, grad_w_stacked, hvp_lambda_w, hvp_ww, hvp_xp_w
from .lr_model import train_gd_traced
from .types import Dataset, HyperParams, ModelState, PoisonBatch, concat_datasets


@dataclass(frozen=True)
class HypergradResult:
    grad_xp: np.ndarray   # (n_p, m)
    grad_lambda: float
    val_loss: float       # L_val at w^(T) of this forward pass
    trace_len: int        # T
    final_state: ModelState

    def __post_init__(self):
        if not (np.isfinite(self.grad_xp).all() and np.isfinite(self.grad_lambda)):
            raise ValueError("non-finite hypergradient")


def merge_poison(train: Dataset, poison: PoisonBatch) -> tuple[Dataset, slice]:
    """Append the poison block after the clean rows; returns the merged set
    and the slice identifying the poison rows."""
    merged = concat_datasets(train, poison.as_dataset())
    return merged, slice(train.n, train.n + poison.n)


def rmd_hypergrad(train: Dataset, poison: PoisonBatch, val: Dataset,
                  h: HyperParams, w0: ModelState | None, eta: float,
                  T: int) -> HypergradResult:
    """Gradients of the validation loss w.r.t. poison features and log-lambda,
    differentiated exactly through T steps of full-batch training."""
    if val.n == 0:
        raise ValueError("validation set must be nonempty")
    merged, prows = merge_poison(train, poison)
    if val.m != merged.m:
        raise ValueError(f"validation has {val.m} features, training has {merged.m}")
    trace = train_gd_traced(merged, h, w0, eta, T)
    eta = trace.eta  # the step actually taken (stability cap may have bound)
    w_final = trace.final
    vloss = data_loss(val, w_final)

    dw = grad_w_stacked(val, w_final, None)
    dxp = np.zeros((poison.n, poison.m))
    dlam = 0.0
    for t in range(T - 1, -1, -1):
        s_t = trace.state(t)
        dg_w = hvp_ww(merged, s_t, h, dw)
        dg_xp = hvp_xp_w(merged, prows, s_t, dw)
        dg_lam = hvp_lambda_w(s_t, h, dw)
        dw = dw - eta * dg_w
        dxp = dxp - eta * dg_xp
        dlam = dlam - eta * dg_lam
        if not np.isfinite(dw).all():
            raise FloatingPointError(f"non-finite adjoint in reverse sweep at step {t}")
    return HypergradResult(dxp, dlam, vloss, T, w_final)
