"""Command-line front end.

Subcommands:
    attack   run the (mode x fraction x repetition) experiment grid
    surface  single-poison error / best-lambda probe grids (synthetic only)
    cv       5-fold cross-validated lambda on the clean training split
    check    oracle verification suite (derivatives vs finite differences)

Any config key can be overridden via POISONREG_<SECTION>_<KEY> env vars.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .config import ConfigError, PRESETS, load_config
from .data_io import gen_synthetic, load_idx, split_dataset, SplitSpec
from .lr_model import test_error, train_sgd
from .oracles import cross_validate_lambda
from .types import HyperParams


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", default=None,
                   help="key=value config file (overrides the preset)")
    p.add_argument("--preset", default="synthetic", choices=sorted(PRESETS),
                   help="named defaults (default: %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="base seed override")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel (mode, repetition) tasks")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering PNG figures next to the CSV outputs")


def _config_from_args(args) -> "experiment.ExperimentConfig":
    overrides = {}
    if args.seed is not None:
        overrides[("experiment", "seed")] = args.seed
    if args.out is not None:
        overrides[("experiment", "out")] = args.out
    if getattr(args, "jobs", None) is not None:
        overrides[("experiment", "jobs")] = args.jobs
    if args.no_figures:
        overrides[("experiment", "figures")] = False
    return load_config(args.config, preset=args.preset, overrides=overrides)


def cmd_attack(args) -> int:
    cfg = _config_from_args(args)
    return experiment.run_experiment(cfg)


def cmd_surface(args) -> int:
    cfg = _config_from_args(args)
    return experiment.emit_surfaces(cfg)


def cmd_cv(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg["experiment", "seed"]
    kind = cfg["experiment", "dataset"]
    if kind == "synthetic":
        train, _ = gen_synthetic(cfg["data", "n_train"], cfg["data", "n_val"], seed)
    elif kind == "idx":
        pool = load_idx(cfg["data", "train_images"], cfg["data", "train_labels"],
                        cfg["data", "class_a"], cfg["data", "class_b"])
        train, _, _ = split_dataset(
            pool, SplitSpec(cfg["data", "n_train"], cfg["data", "n_val"], seed=seed))
    else:
        pool, _ = experiment.load_pool(cfg)
        train, _, _ = split_dataset(
            pool, SplitSpec(cfg["data", "n_train"], cfg["data", "n_val"], seed=seed))
    lam = cross_validate_lambda(train, cfg.cv_grid(), cfg["cv", "k"],
                                cfg.sgd_config(seed),
                                selection=cfg["cv", "selection"])
    model = train_sgd(train, HyperParams(lam), cfg.sgd_config(seed))
    print(f"lambda_clean = {lam!r}")
    print(f"training error at lambda_clean = {test_error(train, model)!r}")
    return 0


def cmd_check(args) -> int:
    from . import checks
    return checks.run_all()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="poisonreg",
        description="Worst-case poisoning of L2-regularized logistic regression "
                    "with jointly learned regularization strength.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, desc in (
            ("attack", cmd_attack, "run the experiment grid"),
            ("surface", cmd_surface, "emit single-poison probe surfaces"),
            ("cv", cmd_cv, "cross-validate lambda on the clean split"),
            ("check", cmd_check, "run the oracle verification suite")):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
