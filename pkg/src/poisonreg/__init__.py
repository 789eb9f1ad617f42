"""Worst-case data poisoning of L2-regularized logistic regression, with the
regularization strength learned jointly against the attack."""

from .attack import (AttackConfig, AttackReport, StrengthSnapshot,
                     fixed_lambda_attack, learn_lambda_clean, minimax_attack,
                     project_box, project_lambda)
from .core_math import (data_loss, grad_w, hvp_lambda_w, hvp_ww, hvp_xp_w,
                        regularized_loss, sigmoid)
from .data_io import (gen_synthetic, init_poison, load_feature_csv, load_idx,
                      split_dataset, SplitSpec, write_idx)
from .hypergrad import HypergradResult, rmd_hypergrad
from .lr_model import (DivergenceError, SgdConfig, TrainTrace, test_error,
                       train_gd_traced, train_sgd, weight_norm_sq)
from .oracles import (GridSpec, cross_validate_lambda, error_surface,
                      finite_diff_hypergrad, lambda_surface, make_gd_trainer)
from .types import Dataset, HyperParams, ModelState, PoisonBatch

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackReport", "Dataset", "DivergenceError", "GridSpec",
    "HyperParams", "HypergradResult", "ModelState", "PoisonBatch", "SgdConfig",
    "SplitSpec", "StrengthSnapshot", "TrainTrace", "cross_validate_lambda",
    "data_loss", "error_surface", "finite_diff_hypergrad", "fixed_lambda_attack",
    "gen_synthetic", "grad_w", "hvp_lambda_w", "hvp_ww", "hvp_xp_w",
    "init_poison", "lambda_surface", "learn_lambda_clean", "load_feature_csv",
    "load_idx", "make_gd_trainer", "minimax_attack", "project_box",
    "project_lambda", "regularized_loss", "rmd_hypergrad", "sigmoid",
    "split_dataset", "test_error", "train_gd_traced", "train_sgd",
    "weight_norm_sq", "write_idx",
]
