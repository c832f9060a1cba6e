"""Histogram gradient-boosted decision trees with per-row init scores."""

from .binning import BinnedDataset, bin_features
from .boosting import (
    TrainParams,
    TreeEnsemble,
    feature_importance,
    predict,
    predict_proba,
    train,
)
from .objectives import (
    MAE,
    WEIGHTED_SOFTMAX_CE,
    ObjectiveConfig,
    grad_hess_mae,
    grad_hess_mae_batch,
    grad_hess_wce,
    grad_hess_wce_batch,
)
from .tree import Tree, grow_tree, grow_tree_with_assignment

__all__ = [
    "BinnedDataset",
    "bin_features",
    "TrainParams",
    "TreeEnsemble",
    "feature_importance",
    "predict",
    "predict_proba",
    "train",
    "MAE",
    "WEIGHTED_SOFTMAX_CE",
    "ObjectiveConfig",
    "grad_hess_mae",
    "grad_hess_mae_batch",
    "grad_hess_wce",
    "grad_hess_wce_batch",
    "Tree",
    "grow_tree",
    "grow_tree_with_assignment",
]
