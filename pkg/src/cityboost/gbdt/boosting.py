"""Gradient boosting with per-row init scores.

Predictions are functional sums: per-row init score h0 plus
learning_rate times each tree's output.  The init score is derived from
features (an encoding lookup), so it is supplied at both train and
predict time rather than stored in the model.

Each iteration grows one tree per output (three for the classification
task) on the gradients at the current scores.  For the absolute-error
objective the grown leaf values are replaced by the median residual of
the rows in each leaf, restoring exact per-leaf L1 optimality that the
sign-gradient surrogate cannot reach.  Validation-based early stopping
truncates the ensemble at its best iteration.

Determinism contract: identical data, params, and init scores produce a
byte-identical serialized model at any thread setting; all reductions
run in fixed feature order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyData, SchemaError, SchemaMismatch
from ..metrics import eval_core_from_scores, softmax
from ..tables import FeatureTable
from .binning import bin_features
from .objectives import (
    MAE,
    WEIGHTED_SOFTMAX_CE,
    ObjectiveConfig,
    grad_hess_mae_batch,
    grad_hess_wce_batch,
)
from .tree import Tree, grow_tree_with_assignment

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainParams:
    num_leaves: int = 31
    num_iters: int = 100
    learning_rate: float = 0.1
    min_data_in_leaf: int = 20
    lambda_l2: float = 1.0
    early_stopping_rounds: int = 50
    max_bins: int = 255
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise SchemaError("num_leaves must be >= 2")
        if self.num_iters < 0:
            raise SchemaError("num_iters must be >= 0")
        if self.learning_rate <= 0:
            raise SchemaError("learning_rate must be > 0")
        if self.min_data_in_leaf < 1:
            raise SchemaError("min_data_in_leaf must be >= 1")
        if self.lambda_l2 < 0:
            raise SchemaError("lambda_l2 must be >= 0")
        if self.max_bins < 2:
            raise SchemaError("max_bins must be >= 2")
        if not 0 < self.feature_fraction <= 1 or not 0 < self.bagging_fraction <= 1:
            raise SchemaError("fractions must be in (0, 1]")

    def to_json(self) -> dict:
        return {
            "num_leaves": self.num_leaves,
            "num_iters": self.num_iters,
            "learning_rate": self.learning_rate,
            "min_data_in_leaf": self.min_data_in_leaf,
            "lambda_l2": self.lambda_l2,
            "early_stopping_rounds": self.early_stopping_rounds,
            "max_bins": self.max_bins,
            "feature_fraction": self.feature_fraction,
            "bagging_fraction": self.bagging_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrainParams":
        return cls(**payload)


@dataclass
class TreeEnsemble:
    objective: ObjectiveConfig
    params: TrainParams
    feature_names: list[str]
    trees: list[list[Tree]] = field(default_factory=list)
    best_iteration: int = 0
    metric_name: str = ""

    @property
    def n_outputs(self) -> int:
        return self.objective.n_outputs

    @property
    def n_iterations(self) -> int:
        return len(self.trees)

    def to_json(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "objective": self.objective.to_json(),
            "params": self.params.to_json(),
            "feature_names": list(self.feature_names),
            "best_iteration": self.best_iteration,
            "metric_name": self.metric_name,
            "trees": [[t.to_json() for t in group] for group in self.trees],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TreeEnsemble":
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise SchemaError(f"unsupported model format {payload.get('format_version')!r}")
        return cls(
            objective=ObjectiveConfig.from_json(payload["objective"]),
            params=TrainParams.from_json(payload["params"]),
            feature_names=list(payload["feature_names"]),
            trees=[[Tree.from_json(t) for t in group] for group in payload["trees"]],
            best_iteration=int(payload["best_iteration"]),
            metric_name=payload["metric_name"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsemble":
        return cls.from_json(json.loads(Path(path).read_text()))


def _normalize_init(init, n_rows: int, n_outputs: int) -> np.ndarray:
    shape = (n_rows, n_outputs) if n_outputs > 1 else (n_rows,)
    if init is None:
        return np.zeros(shape, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != shape:
        raise SchemaMismatch(f"init scores must have shape {shape}, got {init.shape}")
    return init.copy()


def _check_labels(table: FeatureTable, objective: ObjectiveConfig) -> np.ndarray:
    if table.label is None:
        raise SchemaMismatch("training requires a label column")
    if objective.kind == WEIGHTED_SOFTMAX_CE:
        labels = table.label.astype(np.int64)
        if not np.array_equal(labels, table.label) or labels.min() < 0 or labels.max() > 2:
            raise SchemaMismatch("classification labels must be integers in {0, 1, 2}")
        return labels
    return table.label.astype(np.float64)


def train(
    train_table: FeatureTable,
    valid_table: FeatureTable | None,
    init_train,
    init_valid,
    objective: ObjectiveConfig,
    params: TrainParams,
) -> tuple[TreeEnsemble, list[tuple[int, float, float]]]:
    """Boost on the training table, monitoring the validation metric.

    Returns the (possibly early-stopping-truncated) ensemble and a log of
    (iteration, train_metric, valid_metric) rows where iteration 0 holds
    the metrics of the bare init scores.
    """
    if train_table.n_rows == 0:
        raise EmptyData("training table has no rows")
    if valid_table is not None:
        train_table.assert_same_schema(valid_table)
    n_out = objective.n_outputs
    y_train = _check_labels(train_table, objective)
    scores = _normalize_init(init_train, train_table.n_rows, n_out)
    if valid_table is not None:
        y_valid = _check_labels(valid_table, objective)
        valid_scores = _normalize_init(init_valid, valid_table.n_rows, n_out)
    else:
        y_valid = None
        valid_scores = None

    if objective.kind == WEIGHTED_SOFTMAX_CE:
        weights = np.asarray(objective.class_weights, dtype=np.float64)
        metric_name = "weighted_ce"

        def metric(s, y):
            return eval_core_from_scores(s, y, weights)

    else:
        metric_name = "mae"

        def metric(s, y):
            return float(np.abs(s - y).mean())

    binned = bin_features(train_table, params.max_bins)
    rng = np.random.Generator(np.random.PCG64(params.seed))
    n_features = binned.n_features

    log: list[tuple[int, float, float]] = []
    t_metric = metric(scores, y_train)
    v_metric = metric(valid_scores, y_valid) if valid_table is not None else float("nan")
    log.append((0, t_metric, v_metric))
    best_metric, best_iter = v_metric, 0

    trees: list[list[Tree]] = []
    for m in range(1, params.num_iters + 1):
        if params.bagging_fraction < 1.0:
            n_bag = max(1, int(round(params.bagging_fraction * train_table.n_rows)))
            bag_rows = np.sort(rng.choice(train_table.n_rows, size=n_bag, replace=False))
        else:
            bag_rows = None

        group: list[Tree] = []
        if objective.kind == WEIGHTED_SOFTMAX_CE:
            g, h = grad_hess_wce_batch(scores, y_train, weights)
            for c in range(n_out):
                feats = _feature_subset(rng, n_features, params.feature_fraction)
                tree, leaf_of_row = grow_tree_with_assignment(
                    binned, g[:, c], h[:, c], params, root_rows=bag_rows, features=feats
                )
                group.append(tree)
                _update_scores(scores, tree, leaf_of_row, train_table.X, params.learning_rate, c)
                if valid_scores is not None:
                    valid_scores[:, c] += params.learning_rate * tree.predict_raw(valid_table.X)
        else:
            g, h = grad_hess_mae_batch(scores, y_train)
            feats = _feature_subset(rng, n_features, params.feature_fraction)
            tree, leaf_of_row = grow_tree_with_assignment(
                binned, g, h, params, root_rows=bag_rows, features=feats
            )
            _median_leaf_renewal(tree, leaf_of_row, y_train, scores)
            group.append(tree)
            _update_scores(scores, tree, leaf_of_row, train_table.X, params.learning_rate, None)
            if valid_scores is not None:
                valid_scores += params.learning_rate * tree.predict_raw(valid_table.X)
        trees.append(group)

        t_metric = metric(scores, y_train)
        v_metric = metric(valid_scores, y_valid) if valid_table is not None else float("nan")
        log.append((m, t_metric, v_metric))
        if valid_table is not None:
            if v_metric < best_metric:
                best_metric, best_iter = v_metric, m
            elif params.early_stopping_rounds and m - best_iter >= params.early_stopping_rounds:
                logger.info("early stopping at iteration %d (best %d)", m, best_iter)
                break
        else:
            best_iter = m

    model = TreeEnsemble(
        objective=objective,
        params=params,
        feature_names=list(train_table.feature_names),
        trees=trees[:best_iter],
        best_iteration=best_iter,
        metric_name=metric_name,
    )
    return model, log


def _feature_subset(rng, n_features: int, fraction: float) -> list[int] | None:
    if fraction >= 1.0:
        return None
    n_keep = max(1, int(round(fraction * n_features)))
    return sorted(int(f) for f in rng.choice(n_features, size=n_keep, replace=False))


def _update_scores(scores, tree, leaf_of_row, X, learning_rate, output):
    grown = leaf_of_row >= 0
    if grown.all():
        delta = tree.leaf_value[leaf_of_row]
    else:
        # Bagging left out-of-bag rows unassigned; route them explicitly.
        delta = tree.predict_raw(X)
    if output is None:
        scores += learning_rate * delta
    else:
        scores[:, output] += learning_rate * delta


def _median_leaf_renewal(tree: Tree, leaf_of_row, labels, scores) -> None:
    """Replace each leaf value with the median residual of its rows."""
    residual = labels - scores
    grown = leaf_of_row >= 0
    values = tree.leaf_value.copy()
    for leaf in range(tree.n_leaves):
        in_leaf = grown & (leaf_of_row == leaf)
        if in_leaf.any():
            values[leaf] = float(np.median(residual[in_leaf]))
    tree.leaf_value = values


def predict(model: TreeEnsemble, rows: FeatureTable, init=None) -> np.ndarray:
    """Raw scores: init plus learning_rate-scaled tree outputs."""
    if rows.feature_names != model.feature_names:
        raise SchemaMismatch(
            f"feature columns {rows.feature_names} do not match the model's "
            f"{model.feature_names}"
        )
    scores = _normalize_init(init, rows.n_rows, model.n_outputs)
    lr = model.params.learning_rate
    for group in model.trees:
        if model.n_outputs > 1:
            for c, tree in enumerate(group):
                scores[:, c] += lr * tree.predict_raw(rows.X)
        else:
            scores += lr * group[0].predict_raw(rows.X)
    return scores


def predict_proba(model: TreeEnsemble, rows: FeatureTable, init=None) -> np.ndarray:
    """Softmax class probabilities; classification models only."""
    if model.objective.kind != WEIGHTED_SOFTMAX_CE:
        raise SchemaError("predict_proba requires the classification objective")
    return softmax(predict(model, rows, init))


def feature_importance(model: TreeEnsemble) -> np.ndarray:
    """Total split gain per feature, aligned with model.feature_names."""
    total = np.zeros(len(model.feature_names), dtype=np.float64)
    for group in model.trees:
        for tree in group:
            np.add.at(total, tree.feature, tree.gain)
    return total
