"""Experiment driver: the (mode x repetition) grid behind the CLI.

One task runs one attack chain per (mode, repetition) pair, snapshotting at
every requested poisoning fraction; each snapshot becomes one results.csv
row. Everything a row contains is reproducible from the config file and the
seed. Wall-clock goes to timings.csv so results.csv stays byte-identical
across reruns of the same config.
"""
from __future__ import annotations

import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import fixed_lambda_attack, minimax_attack
from .config import ExperimentConfig, write_config
from .data_io import (FeatureStats, gen_synthetic, init_poison, load_feature_csv,
                      load_idx, split_dataset, SplitSpec)
from .oracles import cross_validate_lambda, error_surface, lambda_surface, \
    make_gd_trainer, write_surface_csv
from .types import Dataset, ModelState

log = logging.getLogger("poisonreg")

RESULT_COLUMNS = ("mode", "fraction", "repetition", "seed", "test_error",
                  "lambda_final", "weight_norm_sq", "restarts")

TEST_SEED_OFFSET = 86028157  # synthetic fixed-test stream, disjoint from rep seeds


@dataclass
class ResultRow:
    mode: str
    fraction: float
    repetition: int
    seed: int
    test_error: float
    lambda_final: float
    weight_norm_sq: float
    restarts: int
    wall_ms: float
    model: ModelState | None = None
    failed: bool = False

    def as_csv(self) -> list[str]:
        return [self.mode, repr(self.fraction), str(self.repetition),
                str(self.seed), repr(self.test_error), repr(self.lambda_final),
                repr(self.weight_norm_sq), str(self.restarts)]


def _rep_seed(base: int, rep: int) -> int:
    return base + rep


def load_pool(cfg: ExperimentConfig) -> tuple[Dataset | None, Dataset]:
    """(pool-or-None, fixed test set). Synthetic data has no pool: splits are
    fresh draws per repetition."""
    kind = cfg["experiment", "dataset"]
    if kind == "synthetic":
        test, _ = gen_synthetic(cfg["data", "n_test"], 0,
                                cfg["experiment", "seed"] + TEST_SEED_OFFSET)
        return None, test
    if kind == "idx":
        pool = load_idx(cfg["data", "train_images"], cfg["data", "train_labels"],
                        cfg["data", "class_a"], cfg["data", "class_b"])
        test = load_idx(cfg["data", "test_images"], cfg["data", "test_labels"],
                        cfg["data", "class_a"], cfg["data", "class_b"])
        return pool, test
    if kind == "csv":
        normalize = cfg.get("data", "normalize", False)
        pool, stats = load_feature_csv(cfg["data", "train_csv"], normalize=normalize)
        test, _ = load_feature_csv(cfg["data", "test_csv"], stats=stats)
        return pool, test
    raise ValueError(f"unknown dataset kind {kind!r}")


def split_for_rep(cfg: ExperimentConfig, pool: Dataset | None,
                  rep: int) -> tuple[Dataset, Dataset, int]:
    seed = _rep_seed(cfg["experiment", "seed"], rep)
    n_train, n_val = cfg["data", "n_train"], cfg["data", "n_val"]
    if pool is None:
        train, val = gen_synthetic(n_train, n_val, seed)
    else:
        train, val, _ = split_dataset(pool, SplitSpec(n_train, n_val, seed=seed))
    return train, val, seed


def poison_targets(cfg: ExperimentConfig) -> dict[int, list[float]]:
    """Poison counts for each requested fraction (count -> fractions)."""
    n_train = cfg["data", "n_train"]
    out: dict[int, list[float]] = {}
    for f in cfg["experiment", "fractions"]:
        out.setdefault(round(f * n_train), []).append(f)
    return out


def run_cell(cfg: ExperimentConfig, mode: str, rep: int,
             pool: Dataset | None, test: Dataset) -> list[ResultRow]:
    """One attack chain: all fractions of one (mode, repetition) pair."""
    train, val, seed = split_for_rep(cfg, pool, rep)
    targets = poison_targets(cfg)
    counts = sorted(targets)
    acfg = cfg.attack_config(seed)
    poison = init_poison(val, max(counts), seed, box=cfg.box())

    if mode == "rmd_minimax":
        report = minimax_attack(train, val, test, poison, acfg, snapshot_at=counts)
    else:
        if mode == "fixed_small":
            lam = cfg["attack", "lambda_lo"]
        elif mode == "fixed_large":
            lam = cfg["attack", "lambda_hi"]
        elif mode == "cv_clean":
            lam = cross_validate_lambda(train, cfg.cv_grid(), cfg["cv", "k"],
                                        cfg.sgd_config(seed),
                                        selection=cfg["cv", "selection"])
        else:
            raise ValueError(f"unknown mode {mode!r}")
        report = fixed_lambda_attack(train, val, test, poison, lam, acfg,
                                     snapshot_at=counts)

    rows = []
    by_count = {s.n_poison: s for s in report.snapshots}
    for count, fractions in targets.items():
        snap = by_count[count]
        for f in fractions:
            rows.append(ResultRow(
                mode=mode, fraction=f, repetition=rep, seed=seed,
                test_error=snap.test_error, lambda_final=snap.log_lambda,
                weight_norm_sq=snap.weight_norm_sq, restarts=snap.restarts,
                wall_ms=snap.wall_ms, model=snap.model))
    return rows


def _run_cell_task(args):
    cfg, mode, rep = args
    pool, test = load_pool(cfg)
    return run_cell(cfg, mode, rep, pool, test)


def _failed_rows(cfg: ExperimentConfig, mode: str, rep: int) -> list[ResultRow]:
    seed = _rep_seed(cfg["experiment", "seed"], rep)
    return [ResultRow(mode=mode, fraction=f, repetition=rep, seed=seed,
                      test_error=float("nan"), lambda_final=float("nan"),
                      weight_norm_sq=float("nan"), restarts=0,
                      wall_ms=float("nan"), failed=True)
            for f in cfg["experiment", "fractions"]]


def write_results_csv(path, rows: list[ResultRow]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv())


def write_timings_csv(path, rows: list[ResultRow]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("mode", "fraction", "repetition", "wall_ms"))
        for row in rows:
            w.writerow((row.mode, repr(row.fraction), row.repetition,
                        f"{row.wall_ms:.3f}"))


def summarize(rows: list[ResultRow]) -> list[dict]:
    groups: dict[tuple[str, float], list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.mode, row.fraction), []).append(row)
    out = []
    for (mode, fraction), members in sorted(groups.items()):
        rec = {"mode": mode, "fraction": fraction,
               "n": sum(not r.failed for r in members)}
        for name in ("test_error", "lambda_final", "weight_norm_sq"):
            vals = np.array([getattr(r, name) for r in members])
            rec[f"{name}_mean"] = float(np.nanmean(vals)) if rec["n"] else float("nan")
            rec[f"{name}_std"] = float(np.nanstd(vals)) if rec["n"] else float("nan")
        out.append(rec)
    return out


def write_summary_csv(path, summary: list[dict]):
    cols = ("mode", "fraction", "n", "test_error_mean", "test_error_std",
            "lambda_final_mean", "lambda_final_std", "weight_norm_sq_mean",
            "weight_norm_sq_std")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for rec in summary:
            w.writerow([rec["mode"], repr(rec["fraction"]), rec["n"]]
                       + [repr(rec[c]) for c in cols[3:]])


def emit_histogram(s: ModelState, bins: int, path=None):
    """Relative-frequency histogram of the weight values; frequencies sum to 1."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(s.weights, bins=bins)
    freq = counts / counts.sum()
    if path is not None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("bin_lo", "bin_hi", "frequency"))
            for i in range(bins):
                w.writerow((repr(float(edges[i])), repr(float(edges[i + 1])),
                            repr(float(freq[i]))))
    return freq, edges


def _emit_histograms(cfg: ExperimentConfig, rows: list[ResultRow], out: Path) -> list[Path]:
    """Weight histograms for repetition 0 at the smallest and largest fraction."""
    bins = cfg["experiment", "histogram_bins"]
    paths = []
    fractions = sorted({r.fraction for r in rows if not r.failed})
    if not fractions:
        return paths
    ends = {fractions[0], fractions[-1]}
    for row in rows:
        if row.repetition == 0 and row.fraction in ends and row.model is not None:
            tag = "clean" if row.fraction == fractions[0] else "poisoned"
            path = out / f"hist_{row.mode}_{tag}.csv"
            emit_histogram(row.model, bins, path)
            paths.append(path)
    return paths


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Run the grid, write all outputs; returns a process exit status
    (nonzero iff any cell failed)."""
    out = Path(out_dir if out_dir is not None else cfg["experiment", "out"])
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")

    modes = cfg["experiment", "modes"]
    reps = cfg["experiment", "repetitions"]
    jobs = cfg["experiment", "jobs"]
    cells = [(mode, rep) for mode in modes for rep in range(reps)]
    rows: list[ResultRow] = []
    failures = 0

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_cell_task, (cfg, mode, rep)): (mode, rep)
                       for mode, rep in cells}
            for fut, (mode, rep) in futures.items():
                try:
                    rows.extend(fut.result())
                except Exception:
                    log.exception("cell mode=%s rep=%d failed", mode, rep)
                    rows.extend(_failed_rows(cfg, mode, rep))
                    failures += 1
    else:
        pool_data, test = load_pool(cfg)
        for mode, rep in cells:
            try:
                rows.extend(run_cell(cfg, mode, rep, pool_data, test))
            except Exception:
                log.exception("cell mode=%s rep=%d failed", mode, rep)
                rows.extend(_failed_rows(cfg, mode, rep))
                failures += 1

    rows.sort(key=lambda r: (r.mode, r.fraction, r.repetition))
    write_results_csv(out / "results.csv", rows)
    write_timings_csv(out / "timings.csv", rows)
    write_summary_csv(out / "summary.csv", summarize(rows))
    hist_paths = _emit_histograms(cfg, rows, out)

    if cfg["experiment", "figures"]:
        from . import figures
        figures.render_results(out / "summary.csv", out / "fig_test_error.png",
                               out / "fig_lambda_norm.png")
        for hp in hist_paths:
            figures.render_histogram(hp, hp.with_suffix(".png"))
    return 1 if failures else 0


def emit_surfaces(cfg: ExperimentConfig, out_dir=None) -> int:
    """Single-poison probe grids on the synthetic problem: validation error
    at the small and large fixed lambda, and the per-cell best lambda."""
    if cfg["experiment", "dataset"] != "synthetic":
        raise ValueError("surface scans are defined for the synthetic 2-D dataset")
    out = Path(out_dir if out_dir is not None else cfg["experiment", "out"])
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")

    seed = cfg["experiment", "seed"]
    train, val = gen_synthetic(cfg["data", "n_train"], cfg["data", "n_val"], seed)
    trainer = make_gd_trainer(cfg["attack", "inner_eta"], cfg["attack", "inner_t"])
    grid = cfg.surface_grid()
    lam_small = cfg["surface", "lambda_small"]
    lam_large = cfg["surface", "lambda_large"]

    err_small = error_surface(train, val, grid, lam_small, trainer)
    write_surface_csv(out / "surface_error_small.csv", err_small, grid,
                      "validation_error", lam=lam_small)
    err_large = error_surface(train, val, grid, lam_large, trainer)
    write_surface_csv(out / "surface_error_large.csv", err_large, grid,
                      "validation_error", lam=lam_large)
    best_lam, _ = lambda_surface(train, val, grid, trainer)
    write_surface_csv(out / "surface_best_lambda.csv", best_lam, grid,
                      "best_lambda")

    if cfg["experiment", "figures"]:
        from . import figures
        for name in ("surface_error_small", "surface_error_large",
                     "surface_best_lambda"):
            figures.render_surface(out / f"{name}.csv", out / f"{name}.png",
                                   train=train)
    return 0


def main_check(cfg: ExperimentConfig, stream=sys.stdout) -> int:
    """Oracle verification suite: cross-checks analytic derivatives and the
    reverse sweep against finite differences. Prints PASS/FAIL lines."""
    from . import checks
    return checks.run_all(stream=stream)
