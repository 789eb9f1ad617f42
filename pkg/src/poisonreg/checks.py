"""Self-check suite behind the `check` CLI subcommand: derivative identities
verified against finite differences, and the reverse sweep against full
retraining. Prints one PASS/FAIL line per check."""
from __future__ import annotations

import sys
import time

import numpy as np

from .core_math import grad_w_stacked, hvp_lambda_w, hvp_ww, hvp_xp_w, regularized_loss
from .data_io import gen_synthetic, init_poison, rng_for
from .hypergrad import rmd_hypergrad
from .oracles import finite_diff_hypergrad
from .types import Dataset, HyperParams, ModelState


def random_instance(rng, m=None, n=None):
    m = m if m is not None else int(rng.integers(2, 11))
    n = n if n is not None else int(rng.integers(3, 31))
    d = Dataset(rng.normal(size=(n, m)), rng.integers(0, 2, size=n))
    s = ModelState(rng.normal(size=m) * 0.5, float(rng.normal()) * 0.5)
    h = HyperParams(float(rng.uniform(-3.0, 1.0)))
    return d, s, h


def fd_grad(d, s, h, step=1e-6):
    v0 = s.stacked()
    g = np.zeros_like(v0)
    for j in range(v0.size):
        vp, vm = v0.copy(), v0.copy()
        vp[j] += step
        vm[j] -= step
        g[j] = (regularized_loss(d, ModelState.from_stacked(vp), h)
                - regularized_loss(d, ModelState.from_stacked(vm), h)) / (2 * step)
    return g


def fd_hessian(d, s, h, step=1e-6):
    v0 = s.stacked()
    H = np.zeros((v0.size, v0.size))
    for j in range(v0.size):
        vp, vm = v0.copy(), v0.copy()
        vp[j] += step
        vm[j] -= step
        H[:, j] = (grad_w_stacked(d, ModelState.from_stacked(vp), h)
                   - grad_w_stacked(d, ModelState.from_stacked(vm), h)) / (2 * step)
    return H


def check_gradient(seed=0, trials=10, tol=1e-5):
    rng = rng_for(seed)
    worst = 0.0
    for _ in range(trials):
        d, s, h = random_instance(rng, m=int(rng.integers(2, 21)),
                                  n=int(rng.integers(3, 51)))
        g = grad_w_stacked(d, s, h)
        ref = fd_grad(d, s, h)
        worst = max(worst, np.linalg.norm(g - ref) / np.linalg.norm(ref))
    return worst <= tol, f"max rel err {worst:.3e} (tol {tol:g})"


def check_hvp_ww(seed=1, trials=20, tol=1e-6):
    rng = rng_for(seed)
    worst = 0.0
    for _ in range(trials):
        d, s, h = random_instance(rng)
        v = rng.normal(size=s.m + 1)
        hv = hvp_ww(d, s, h, v)
        ref = fd_hessian(d, s, h) @ v
        worst = max(worst, np.linalg.norm(hv - ref) / np.linalg.norm(ref))
    return worst <= tol, f"max rel err {worst:.3e} over {trials} instances (tol {tol:g})"


def check_hvp_xp(seed=2, trials=10, tol=1e-5, step=1e-6):
    rng = rng_for(seed)
    worst = 0.0
    for _ in range(trials):
        d, s, _ = random_instance(rng, m=int(rng.integers(2, 6)))
        v = rng.normal(size=s.m + 1)
        k = int(rng.integers(0, d.n))
        got = hvp_xp_w(d, np.array([k]), s, v)[0]
        ref = np.zeros(d.m)
        for c in range(d.m):
            Xp = np.array(d.features)
            Xm = np.array(d.features)
            Xp[k, c] += step
            Xm[k, c] -= step
            gp = grad_w_stacked(Dataset(Xp, d.labels), s, None)
            gm = grad_w_stacked(Dataset(Xm, d.labels), s, None)
            ref[c] = (gp - gm) @ v / (2 * step)
        worst = max(worst, np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-30))
    return worst <= tol, f"max rel err {worst:.3e} (tol {tol:g})"


def check_hvp_lambda(seed=3, trials=10, tol=1e-6, step=1e-6):
    rng = rng_for(seed)
    worst = 0.0
    for _ in range(trials):
        d, s, h = random_instance(rng)
        v = rng.normal(size=s.m + 1)
        got = hvp_lambda_w(s, h, v)
        gp = grad_w_stacked(d, s, h.with_lambda(h.log_lambda + step))
        gm = grad_w_stacked(d, s, h.with_lambda(h.log_lambda - step))
        ref = (gp - gm) @ v / (2 * step)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-30))
    return worst <= tol, f"max rel err {worst:.3e} (tol {tol:g})"


def check_rmd(seed=4, T=50, eta=0.2):
    train, val = gen_synthetic(32, 64, seed)
    poison = init_poison(val, 1, seed, box=(-9.5, 9.5))
    h = HyperParams(0.0)
    res = rmd_hypergrad(train, poison, val, h, None, eta, T)
    fd_xp, fd_lam = finite_diff_hypergrad(train, poison, val, h, None, eta, T)
    cos = float(res.grad_xp.ravel() @ fd_xp.ravel()
                / (np.linalg.norm(res.grad_xp) * np.linalg.norm(fd_xp)))
    rel = abs(np.linalg.norm(res.grad_xp) - np.linalg.norm(fd_xp)) \
        / np.linalg.norm(fd_xp)
    rel_lam = abs(res.grad_lambda - fd_lam) / abs(fd_lam)
    ok = cos >= 0.999 and rel <= 1e-2 and rel_lam <= 1e-2
    return ok, (f"cos {cos:.6f} (>=0.999), |grad_xp| rel err {rel:.3e} (<=1e-2), "
                f"grad_lambda rel err {rel_lam:.3e} (<=1e-2)")


CHECKS = (
    ("gradient vs finite differences", check_gradient),
    ("hvp_ww vs explicit FD Hessian", check_hvp_ww),
    ("hvp_xp_w vs FD of grad_w", check_hvp_xp),
    ("hvp_lambda_w vs FD in lambda", check_hvp_lambda),
    ("rmd_hypergrad vs retraining FD", check_rmd),
)


def run_all(stream=sys.stdout) -> int:
    failures = 0
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        ok, detail = fn()
        dt = time.perf_counter() - t0
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} [{dt:.2f}s]",
              file=stream)
        failures += not ok
    return 1 if failures else 0
