"""Ablation runner over the four solution components.

Each arm is a subset of {"pca", "init_score", "target_encoding",
"tuned"}: a missing flag drops the PCA score columns, zeroes the init
scores, drops the encoding-derived columns, or skips tuning.  All arms
share the same split and fitted artifacts, so the report isolates the
feature/init deltas.  Metrics are reported; no ordering is enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..gbdt import ObjectiveConfig, TrainParams, predict, predict_proba, train
from ..gbdt.objectives import MAE, WEIGHTED_SOFTMAX_CE
from ..metrics import eval_core, eval_extended
from ..tables import FeatureTable
from .assembly import (
    CORE,
    CORE_ENCODING_COLUMNS,
    EXTENDED_ENCODING_COLUMNS,
    ArtifactBundle,
    PipelineConfig,
    assemble,
    fit_artifacts,
)
from .split import SplitSpec, interleaved_split
from .tuning import stepwise_tune
from .worlddata import WorldData

ARM_FLAGS = ("pca", "init_score", "target_encoding", "tuned")

DEFAULT_TUNE_SPACE = [
    ("num_leaves", [31, 63]),
    ("learning_rate", [0.1, 0.2]),
]


def arm_tables(
    table_train: FeatureTable, table_valid: FeatureTable, config: PipelineConfig, arm
) -> tuple[FeatureTable, FeatureTable, np.ndarray | None, np.ndarray | None]:
    """Apply an arm's feature drops and init zeroing to assembled tables."""
    arm = frozenset(arm)
    drop: list[str] = []
    if "pca" not in arm:
        drop += [n for n in table_train.feature_names if n.startswith(("pc_last_", "pc_sum_"))]
    if "target_encoding" not in arm:
        enc = CORE_ENCODING_COLUMNS if config.task == CORE else EXTENDED_ENCODING_COLUMNS
        drop += [n for n in table_train.feature_names if n in enc]
    tr = table_train.drop_features(drop) if drop else table_train
    va = table_valid.drop_features(drop) if drop else table_valid
    if "init_score" in arm:
        return tr, va, tr.init, va.init
    return tr, va, None, None


def objective_for(config: PipelineConfig) -> ObjectiveConfig:
    if config.task == CORE:
        return ObjectiveConfig(kind=WEIGHTED_SOFTMAX_CE, class_weights=config.class_weights)
    return ObjectiveConfig(kind=MAE)


def final_valid_metric(model, log, table_valid, init_valid, config: PipelineConfig) -> float:
    """Validation metric of the shipped (truncated) model."""
    if config.task == CORE:
        proba = predict_proba(model, table_valid, init_valid)
        return eval_core(proba, table_valid.label, config.class_weights)
    preds = predict(model, table_valid, init_valid)
    return eval_extended(preds, table_valid.label)


@dataclass
class AblationResult:
    rows: list[dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=[*ARM_FLAGS, "valid_metric"])

    def to_csv(self, path) -> None:
        df = self.to_frame()
        df["valid_metric"] = df["valid_metric"].map(lambda v: f"{v:.6f}")
        df.to_csv(path, index=False)


def ablate(
    world: WorldData,
    arms,
    config: PipelineConfig,
    params: TrainParams,
    split: SplitSpec | None = None,
    tune_space=None,
    tune_budget: int | None = None,
) -> AblationResult:
    """Train one model per arm on identical splits and report the metrics."""
    for arm in arms:
        unknown = set(arm) - set(ARM_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")
    if split is None:
        split = interleaved_split(world.weeks())
    bundle = fit_artifacts(world, split, config)
    table_train = assemble(world, bundle, weeks=split.train_weeks)
    table_valid = assemble(world, bundle, weeks=split.valid_weeks)
    objective = objective_for(config)

    result = AblationResult()
    for arm in arms:
        arm = frozenset(arm)
        tr, va, init_tr, init_va = arm_tables(table_train, table_valid, config, arm)
        arm_params = params
        if "tuned" in arm:
            space = tune_space if tune_space is not None else DEFAULT_TUNE_SPACE

            def tune_run(p: TrainParams) -> float:
                model, _ = train(tr, va, init_tr, init_va, objective, p)
                return final_valid_metric(model, _, va, init_va, config)

            arm_params, _ = stepwise_tune(tune_run, params, space, budget=tune_budget)
        model, log = train(tr, va, init_tr, init_va, objective, arm_params)
        metric = final_valid_metric(model, log, va, init_va, config)
        result.rows.append(
            {flag: int(flag in arm) for flag in ARM_FLAGS} | {"valid_metric": metric}
        )
    return result
