"""Robustness verification and certified robust boosting for stump and tree ensembles."""

from .geometry import AxisBox, PerturbationSpec, parse_norm, point_box_distance
from .models import (
    Leaf,
    Split,
    Stump,
    StumpEnsemble,
    TreeEnsemble,
    aggregate_features,
    load_model,
    save_model,
)
from .stump_verify import (
    ResourceLimitError,
    VerificationResult,
    verify_l0,
    verify_linf,
    verify_lp_dp,
    verify_lp_exact,
)
from .tree_verify import MultiLevelConfig, verify_ensemble_multilevel, verify_single_tree
from .training import TrainConfig, TrainingError, fit_stump_ensemble, fit_tree_ensemble

__version__ = "0.1.0"

__all__ = [
    "AxisBox",
    "Leaf",
    "MultiLevelConfig",
    "PerturbationSpec",
    "ResourceLimitError",
    "Split",
    "Stump",
    "StumpEnsemble",
    "TrainConfig",
    "TrainingError",
    "TreeEnsemble",
    "VerificationResult",
    "aggregate_features",
    "fit_stump_ensemble",
    "fit_tree_ensemble",
    "load_model",
    "parse_norm",
    "point_box_distance",
    "save_model",
    "verify_ensemble_multilevel",
    "verify_l0",
    "verify_linf",
    "verify_lp_dp",
    "verify_lp_exact",
    "verify_single_tree",
]
