"""Projected hypergradient ascent/descent on poison features and log-lambda.

One hyperiteration = one reverse-mode differentiation of the inner training
loop, followed by the paired projected updates

    X_p <- proj_box(X_p + alpha * n * dA/dX_p)
    lam <- proj_range(lam - beta * sign(dA/dlam))

where n is the size of the (poisoned) training set. The n factor converts
the published poison step sizes, which assume sum-scaled training losses, to
this library's sample-averaged losses: the mixed second derivatives behind
the hypergradients all carry a 1/n, so without the conversion the same alpha
moves the poison n times slower than intended.

The lambda step is the sign of the hypergradient scaled by beta. The raw
lambda gradient is proportional to e^lambda and so spans four to five orders
of magnitude over a feasible interval like [-8, log 200]; a fixed multiple
of it either stalls near the lower end or overshoots near the upper end.
The sign step moves beta per hyperiteration everywhere, which is what makes
the published beta values and hyperiteration budgets line up.

Poison points are optimized in consecutive groups (17 at a time by default);
once a group is optimized it is frozen into the training set and the next
group is appended, simulating growing attack strength. The reported model at
each attack strength is retrained from scratch with mini-batch SGD on the
poisoned set, not the RMD forward-pass model.

Restarts (off by default) follow the stall rule: if the outer objective has
not improved by more than stall_tol for stall_window consecutive
hyperiterations, poison features are resampled from opposite-label
validation rows (without duplicates) and lambda is resampled uniformly in
+-0.5 around its current value, both re-projected. With restarts on, each
phase returns the best point seen rather than the last one.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core_math import data_loss
from .hypergrad import rmd_hypergrad
from .lr_model import DivergenceError, SgdConfig, test_error, train_gd_traced, train_sgd, weight_norm_sq
from .types import Dataset, HyperParams, ModelState, PoisonBatch, concat_datasets

LAMBDA_WARM_START = math.log(5.0)  # clean-set warm start for learned lambda


def project_box(X: np.ndarray, lo, hi) -> np.ndarray:
    """Elementwise clamp of poison features into their feasible box."""
    return np.clip(X, lo, hi)


def project_lambda(lam: float, lambda_range: tuple[float, float]) -> float:
    lo, hi = lambda_range
    return float(min(max(lam, lo), hi))


@dataclass(frozen=True)
class AttackConfig:
    """Outer-loop settings; defaults follow the MNIST preset, see config.py."""

    alpha: float                       # poison feature step
    beta: float                        # lambda step
    t_dp: int                          # hyperiterations per group, lambda fixed
    t_lambda: int                      # hyperiterations of clean lambda descent
    t_mul: int                         # hyperiterations per group, joint updates
    inner_eta: float                   # forward-pass GD learning rate
    inner_t: int                       # forward-pass GD steps
    lambda_range: tuple[float, float]
    eval_sgd: SgdConfig
    poison_group_size: int = 17
    restart_policy: bool = False
    stall_window: int = 10
    stall_tol: float = 1e-5
    warm_start_lambda: float = LAMBDA_WARM_START
    coordinate_mode: str = "simultaneous"  # or "alternating"
    penalize_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if min(self.t_dp, self.t_lambda, self.t_mul) < 0:
            raise ValueError("hyperiteration budgets must be >= 0")
        if self.poison_group_size < 1:
            raise ValueError("poison_group_size must be >= 1")
        if self.coordinate_mode not in ("simultaneous", "alternating"):
            raise ValueError(f"unknown coordinate_mode {self.coordinate_mode!r}")

    def hyperparams(self, lam: float) -> HyperParams:
        return HyperParams(lam, self.lambda_range, self.penalize_bias)


@dataclass(frozen=True)
class IterationRecord:
    phase: str
    n_poison: int        # poison rows in the training set at this iteration
    iteration: int       # index within the phase
    val_loss: float      # outer objective at the pre-update point
    log_lambda: float    # after update and projection
    weight_norm_sq: float  # of the forward-pass final model
    restarted: bool


@dataclass(frozen=True)
class StrengthSnapshot:
    """Evaluation after the group reaching n_poison points was optimized."""

    n_poison: int
    log_lambda: float
    model: ModelState
    test_error: float
    val_error: float
    weight_norm_sq: float
    restarts: int
    wall_ms: float  # cumulative attack wall clock when the snapshot was taken


@dataclass
class AttackReport:
    records: list[IterationRecord]
    snapshots: list[StrengthSnapshot]
    final_poison: PoisonBatch
    final_lambda: float
    final_model: ModelState
    final_test_error: float
    restarts: int
    wall_ms: float
    rng_algorithm: str = "numpy-pcg64"


@dataclass
class AttackLoopState:
    """Mutable optimizer state threaded through one phase; restart_if_stalled
    operates on this."""

    poison: PoisonBatch | None         # currently optimized group (None: lambda only)
    log_lambda: float
    val: Dataset
    lambda_range: tuple[float, float]
    optimize_poison: bool
    optimize_lambda: bool
    maximize: bool                     # stall-detection objective sense
    stall_window: int
    stall_tol: float
    best_objective: float = field(default=-math.inf)
    since_improve: int = 0
    restarts: int = 0

    def observe(self, objective: float):
        signed = objective if self.maximize else -objective
        if signed > self.best_objective + self.stall_tol:
            self.best_objective = signed
            self.since_improve = 0
        else:
            self.since_improve += 1


def _resample_poison_from_val(poison: PoisonBatch, val: Dataset,
                              rng: np.random.Generator) -> PoisonBatch:
    # poison labels stay fixed; features come from opposite-label validation
    # rows so every point remains a flipped clone of a trusted sample
    X = np.array(poison.features)
    for label in (0, 1):
        rows = np.flatnonzero(poison.labels == label)
        pool = np.flatnonzero(val.labels == 1 - label)
        if rows.size > pool.size:
            raise ValueError(
                f"validation set has {pool.size} rows of class {1 - label}, "
                f"cannot restart {rows.size} poison points without duplicates")
        picked = pool[rng.permutation(pool.size)[:rows.size]]
        X[rows] = val.features[picked]
    return poison.with_features(project_box(X, poison.box_lo, poison.box_hi))


def restart_if_stalled(state: AttackLoopState, rng: np.random.Generator) -> bool:
    """Resample the optimized variables when the stall rule fires. Returns
    whether a restart happened; the state is updated in place."""
    if state.since_improve < state.stall_window:
        return False
    if state.optimize_poison and state.poison is not None and state.poison.n:
        state.poison = _resample_poison_from_val(state.poison, state.val, rng)
    if state.optimize_lambda:
        lam = state.log_lambda + rng.uniform(-0.5, 0.5)
        state.log_lambda = project_lambda(lam, state.lambda_range)
    state.restarts += 1
    state.since_improve = 0
    return True


def _empty_poison(m: int) -> PoisonBatch:
    return PoisonBatch(np.zeros((0, m)), np.zeros(0, dtype=np.int64))


def _forward_objective(base: Dataset, poison: PoisonBatch | None, val: Dataset,
                       h: HyperParams, eta: float, T: int) -> float:
    merged = base if poison is None or poison.n == 0 \
        else concat_datasets(base, poison.as_dataset())
    trace = train_gd_traced(merged, h, None, eta, T)
    return data_loss(val, trace.final)


def _run_phase(base: Dataset, state: AttackLoopState, cfg: AttackConfig,
               budget: int, phase: str, records: list[IterationRecord],
               rng: np.random.Generator, n_poison: int = 0) -> None:
    """One optimization phase over the active group and/or lambda."""
    # lambda-only phases always keep the best lambda seen: the sign step
    # oscillates around the minimizer, and the defender gets to pick the
    # value that actually minimized validation loss
    track_best = cfg.restart_policy or (state.optimize_lambda
                                        and not state.optimize_poison)
    best = None  # (signed objective, poison features, lambda)
    simultaneous = cfg.coordinate_mode == "simultaneous"
    active_n = state.poison.n if state.poison is not None else 0
    step_scale = base.n + active_n  # sum-loss to mean-loss step conversion
    for i in range(budget):
        h = cfg.hyperparams(state.log_lambda)
        active = state.poison if state.poison is not None else _empty_poison(base.m)
        try:
            res = rmd_hypergrad(base, active, state.val, h, None,
                                cfg.inner_eta, cfg.inner_t)
        except (DivergenceError, FloatingPointError) as e:
            raise DivergenceError(i, context=f"{phase} hyperiteration") from e
        obj = res.val_loss
        if track_best:
            signed = obj if state.maximize else -obj
            if best is None or signed > best[0]:
                best = (signed,
                        None if state.poison is None else state.poison.features,
                        state.log_lambda)
        do_poison = state.optimize_poison and (simultaneous or i % 2 == 0)
        do_lambda = state.optimize_lambda and (simultaneous or i % 2 == 1)
        if do_poison and state.poison is not None and state.poison.n:
            X = state.poison.features + cfg.alpha * step_scale * res.grad_xp
            state.poison = state.poison.with_features(
                project_box(X, state.poison.box_lo, state.poison.box_hi))
        if do_lambda and res.grad_lambda != 0.0:
            state.log_lambda = project_lambda(
                state.log_lambda - cfg.beta * math.copysign(1.0, res.grad_lambda),
                state.lambda_range)
        restarted = False
        if cfg.restart_policy:
            state.observe(obj)
            restarted = restart_if_stalled(state, rng)
        records.append(IterationRecord(
            phase=phase, n_poison=n_poison, iteration=i, val_loss=obj,
            log_lambda=state.log_lambda,
            weight_norm_sq=weight_norm_sq(res.final_state), restarted=restarted))
    if track_best and budget > 0 and best is not None:
        # the point after the last update was never scored; score it so the
        # phase can return the best point actually seen
        h = cfg.hyperparams(state.log_lambda)
        final_obj = _forward_objective(base, state.poison, state.val, h,
                                       cfg.inner_eta, cfg.inner_t)
        signed = final_obj if state.maximize else -final_obj
        if signed < best[0]:
            if state.poison is not None and best[1] is not None:
                state.poison = state.poison.with_features(best[1])
            state.log_lambda = best[2]


def _evaluate(train_poisoned: Dataset, val: Dataset, test: Dataset,
              lam: float, cfg: AttackConfig) -> tuple[ModelState, float, float, float]:
    model = train_sgd(train_poisoned, cfg.hyperparams(lam), cfg.eval_sgd)
    return (model, test_error(test, model), test_error(val, model),
            weight_norm_sq(model))


def _group_plan(n: int, size: int, targets: list[int]) -> list[tuple[int, int]]:
    # consecutive chunks of <= size, additionally cut at every snapshot target
    cuts = sorted({t for t in targets if 0 < t <= n} | ({n} if n else set()))
    chunks, start = [], 0
    for cut in cuts:
        while start < cut:
            end = min(start + size, cut)
            chunks.append((start, end))
            start = end
    return chunks


def _attack_core(train: Dataset, val: Dataset, test: Dataset, poison: PoisonBatch,
                 cfg: AttackConfig, *, lam0: float, clean_lambda_budget: int,
                 learn_lambda_in_groups: bool, group_budget: int,
                 snapshot_at: list[int] | None) -> AttackReport:
    t_start = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    targets = sorted(set(snapshot_at)) if snapshot_at is not None \
        else list(range(0, poison.n + 1))
    records: list[IterationRecord] = []
    snapshots: list[StrengthSnapshot] = []
    restarts = 0
    lam = lam0

    if clean_lambda_budget > 0:
        state = AttackLoopState(
            poison=None, log_lambda=lam, val=val, lambda_range=cfg.lambda_range,
            optimize_poison=False, optimize_lambda=True, maximize=False,
            stall_window=cfg.stall_window, stall_tol=cfg.stall_tol)
        _run_phase(train, state, cfg, clean_lambda_budget, "lambda_clean",
                   records, rng)
        lam = state.log_lambda
        restarts += state.restarts

    def snapshot(n_poison: int, current_train: Dataset):
        model, te, ve, nrm = _evaluate(current_train, val, test, lam, cfg)
        snapshots.append(StrengthSnapshot(
            n_poison=n_poison, log_lambda=lam, model=model, test_error=te,
            val_error=ve, weight_norm_sq=nrm, restarts=restarts,
            wall_ms=(time.perf_counter() - t_start) * 1e3))

    if 0 in targets:
        snapshot(0, train)

    optimized = np.array(poison.features)
    base = train
    for g, (start, stop) in enumerate(_group_plan(poison.n, cfg.poison_group_size,
                                                  targets)):
        active = poison.slice(start, stop).with_features(optimized[start:stop])
        state = AttackLoopState(
            poison=active, log_lambda=lam, val=val, lambda_range=cfg.lambda_range,
            optimize_poison=True, optimize_lambda=learn_lambda_in_groups,
            maximize=True, stall_window=cfg.stall_window, stall_tol=cfg.stall_tol)
        _run_phase(base, state, cfg, group_budget, f"group{g}", records, rng,
                   n_poison=stop)
        optimized[start:stop] = state.poison.features
        lam = state.log_lambda
        restarts += state.restarts
        base = concat_datasets(base, state.poison.as_dataset())
        if learn_lambda_in_groups:
            # coordinate sweep: let lambda settle against the frozen poison
            lstate = AttackLoopState(
                poison=None, log_lambda=lam, val=val,
                lambda_range=cfg.lambda_range, optimize_poison=False,
                optimize_lambda=True, maximize=False,
                stall_window=cfg.stall_window, stall_tol=cfg.stall_tol)
            _run_phase(base, lstate, cfg, cfg.t_lambda, f"lambda_group{g}",
                       records, rng, n_poison=stop)
            lam = lstate.log_lambda
            restarts += lstate.restarts
        if stop in targets:
            snapshot(stop, base)

    final_poison = poison.with_features(optimized)
    if snapshots and snapshots[-1].n_poison == poison.n:
        last = snapshots[-1]
        final_model, final_te = last.model, last.test_error
    else:
        final_model, final_te, _, _ = _evaluate(base, val, test, lam, cfg)
    wall_ms = (time.perf_counter() - t_start) * 1e3
    return AttackReport(records=records, snapshots=snapshots,
                        final_poison=final_poison, final_lambda=lam,
                        final_model=final_model, final_test_error=final_te,
                        restarts=restarts, wall_ms=wall_ms)


def minimax_attack(train: Dataset, val: Dataset, test: Dataset,
                   poison: PoisonBatch, cfg: AttackConfig,
                   snapshot_at: list[int] | None = None) -> AttackReport:
    """Joint attack, coordinate style: clean lambda descent from the warm
    start, then per group T_mul joint hyperiterations (simultaneous ascent on
    X_p, descent on lambda) followed by a T_lambda lambda-only sweep against
    the frozen poison before the group is evaluated."""
    lam0 = project_lambda(cfg.warm_start_lambda, cfg.lambda_range)
    return _attack_core(train, val, test, poison, cfg, lam0=lam0,
                        clean_lambda_budget=cfg.t_lambda,
                        learn_lambda_in_groups=True, group_budget=cfg.t_mul,
                        snapshot_at=snapshot_at)


def fixed_lambda_attack(train: Dataset, val: Dataset, test: Dataset,
                        poison: PoisonBatch, lam_fixed: float, cfg: AttackConfig,
                        snapshot_at: list[int] | None = None) -> AttackReport:
    """Ascent on X_p only with lambda frozen (the constant-hyperparameter
    evaluation this attack formulation generalizes)."""
    return _attack_core(train, val, test, poison, cfg, lam0=float(lam_fixed),
                        clean_lambda_budget=0, learn_lambda_in_groups=False,
                        group_budget=cfg.t_dp, snapshot_at=snapshot_at)


def learn_lambda_clean(train: Dataset, val: Dataset, cfg: AttackConfig) -> float:
    """lambda-only hypergradient descent on the clean set, T_lambda steps,
    projected each step; returns the resulting lambda."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state = AttackLoopState(
        poison=None, log_lambda=project_lambda(cfg.warm_start_lambda, cfg.lambda_range),
        val=val, lambda_range=cfg.lambda_range,
        optimize_poison=False, optimize_lambda=True, maximize=False,
        stall_window=cfg.stall_window, stall_tol=cfg.stall_tol)
    records: list[IterationRecord] = []
    _run_phase(train, state, cfg, cfg.t_lambda, "lambda_clean", records, rng)
    return state.log_lambda
