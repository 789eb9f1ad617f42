"""Figure rendering for the report path: every delimited output has a
matplotlib rendering saved next to it."""
from __future__ import annotations

import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .oracles import read_surface_csv
from .types import Dataset

MODE_STYLE = {
    "fixed_small": ("tab:red", "o", r"small fixed $\lambda$"),
    "fixed_large": ("tab:green", "s", r"large fixed $\lambda$"),
    "cv_clean": ("tab:orange", "^", r"$\lambda_{CLEAN}$ (5-fold CV)"),
    "rmd_minimax": ("tab:blue", "d", r"$\lambda_{RMD}$ (learned)"),
}


def _read_summary(path) -> dict[str, dict[str, np.ndarray]]:
    per_mode: dict[str, list[dict]] = {}
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            per_mode.setdefault(rec["mode"], []).append(rec)
    out = {}
    for mode, recs in per_mode.items():
        recs.sort(key=lambda r: float(r["fraction"]))
        out[mode] = {k: np.array([float(r[k]) for r in recs])
                     for k in recs[0] if k not in ("mode", "n")}
    return out


def render_results(summary_csv, error_png, lambda_png):
    data = _read_summary(summary_csv)

    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for mode, series in data.items():
        color, marker, label = MODE_STYLE.get(mode, ("gray", "x", mode))
        ax.errorbar(100 * series["fraction"], series["test_error_mean"],
                    yerr=series["test_error_std"], color=color, marker=marker,
                    capsize=2, label=label)
    ax.set_xlabel("poisoning points (%)")
    ax.set_ylabel("average test error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(error_png, dpi=150)
    plt.close(fig)

    if "rmd_minimax" in data:
        series = data["rmd_minimax"]
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        ax.errorbar(100 * series["fraction"], series["lambda_final_mean"],
                    yerr=series["lambda_final_std"], color="tab:blue",
                    marker="o", capsize=2, label=r"$\lambda$")
        ax.set_xlabel("poisoning points (%)")
        ax.set_ylabel(r"average $\lambda$", color="tab:blue")
        ax2 = ax.twinx()
        ax2.errorbar(100 * series["fraction"], series["weight_norm_sq_mean"],
                     yerr=series["weight_norm_sq_std"], color="tab:red",
                     marker="s", capsize=2, label=r"$\|w\|_2^2$")
        ax2.set_ylabel(r"average $\|w\|_2^2$", color="tab:red")
        fig.tight_layout()
        fig.savefig(lambda_png, dpi=150)
        plt.close(fig)


def render_surface(surface_csv, png, train: Dataset | None = None):
    surface, meta = read_surface_csv(surface_csv)
    extent = (float(meta["xlo"]), float(meta["xhi"]),
              float(meta["ylo"]), float(meta["yhi"]))
    fig, ax = plt.subplots(figsize=(4.4, 3.8))
    im = ax.imshow(surface, origin="lower", extent=extent, aspect="auto",
                   cmap="viridis")
    fig.colorbar(im, ax=ax, label=meta.get("kind", "value"))
    if train is not None and train.m == 2:
        for label, color in ((0, "tab:blue"), (1, "tab:green")):
            rows = train.labels == label
            ax.scatter(train.features[rows, 0], train.features[rows, 1],
                       s=12, c=color, edgecolors="white", linewidths=0.4)
    title = meta.get("kind", "")
    if "lambda" in meta:
        title += f" @ lambda={float(meta['lambda']):.3g}"
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(png, dpi=150)
    plt.close(fig)


def render_histogram(hist_csv, png):
    lo, hi, freq = [], [], []
    with open(hist_csv, newline="") as f:
        for rec in csv.DictReader(f):
            lo.append(float(rec["bin_lo"]))
            hi.append(float(rec["bin_hi"]))
            freq.append(float(rec["frequency"]))
    lo, hi, freq = map(np.array, (lo, hi, freq))
    fig, ax = plt.subplots(figsize=(4.4, 3.2))
    ax.bar(lo, freq, width=hi - lo, align="edge", color="tab:blue",
           edgecolor="white", linewidth=0.3)
    ax.set_xlabel("weight value")
    ax.set_ylabel("relative frequency")
    fig.tight_layout()
    fig.savefig(png, dpi=150)
    plt.close(fig)
