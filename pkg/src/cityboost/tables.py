"""Assembled tabular datasets: one row per (entity, week, slot).

A FeatureTable is the contract between feature assembly and the trainer:
named numeric feature columns in a stable order, an optional label, and
optional per-row init scores which ride along but are not features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SchemaError, SchemaMismatch

INIT_COLUMNS = ("init_0", "init_1", "init_2")


@dataclass
class FeatureTable:
    entity_ids: np.ndarray
    weeks: np.ndarray
    slots: np.ndarray
    feature_names: list[str]
    X: np.ndarray
    label: np.ndarray | None = None
    init: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entity_ids = np.asarray(self.entity_ids, dtype=np.int64)
        self.weeks = np.asarray(self.weeks, dtype=np.int64)
        self.slots = np.asarray(self.slots, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        n = len(self.entity_ids)
        if self.X.shape != (n, len(self.feature_names)):
            raise SchemaError(
                f"feature matrix shape {self.X.shape} does not match "
                f"{n} rows x {len(self.feature_names)} features"
            )
        if self.weeks.shape != (n,) or self.slots.shape != (n,):
            raise SchemaError("row key arrays must all have the same length")
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=np.float64)
            if self.label.shape != (n,):
                raise SchemaError("label length must match the row count")
        if self.init is not None:
            self.init = np.asarray(self.init, dtype=np.float64)
            if self.init.shape[0] != n:
                raise SchemaError("init scores must match the row count")
        if n:
            keys = np.stack([self.entity_ids, self.weeks, self.slots], axis=1)
            if len(np.unique(keys, axis=0)) != n:
                raise SchemaError("duplicate (entity, week, slot) row keys")

    @property
    def n_rows(self) -> int:
        return len(self.entity_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def assert_same_schema(self, other: "FeatureTable") -> None:
        if self.feature_names != other.feature_names:
            raise SchemaMismatch(
                f"feature columns differ: {self.feature_names} vs {other.feature_names}"
            )

    def select_rows(self, mask: np.ndarray) -> "FeatureTable":
        return FeatureTable(
            entity_ids=self.entity_ids[mask],
            weeks=self.weeks[mask],
            slots=self.slots[mask],
            feature_names=list(self.feature_names),
            X=self.X[mask],
            label=None if self.label is None else self.label[mask],
            init=None if self.init is None else self.init[mask],
            meta=dict(self.meta),
        )

    def drop_features(self, names) -> "FeatureTable":
        """Column-subset copy used by ablation arms; init is preserved."""
        drop = set(names)
        keep = [i for i, name in enumerate(self.feature_names) if name not in drop]
        return FeatureTable(
            entity_ids=self.entity_ids,
            weeks=self.weeks,
            slots=self.slots,
            feature_names=[self.feature_names[i] for i in keep],
            X=self.X[:, keep],
            label=self.label,
            init=self.init,
            meta=dict(self.meta),
        )

    def to_frame(self) -> pd.DataFrame:
        data = {
            "entity_id": self.entity_ids,
            "week": self.weeks,
            "slot": self.slots,
        }
        for j, name in enumerate(self.feature_names):
            data[name] = self.X[:, j]
        if self.label is not None:
            data["label"] = self.label
        if self.init is not None:
            if self.init.ndim == 2:
                for j in range(self.init.shape[1]):
                    data[INIT_COLUMNS[j]] = self.init[:, j]
            else:
                data["init"] = self.init
        return pd.DataFrame(data)

    def to_csv(self, path: str | Path) -> None:
        # %.17g round-trips float64 exactly.
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureTable":
        df = pd.read_csv(path, float_precision="round_trip")
        for col in ("entity_id", "week", "slot"):
            if col not in df.columns:
                raise SchemaError(f"{path}: missing key column {col!r}")
        init = None
        if "init" in df.columns:
            init = df["init"].to_numpy(dtype=np.float64)
        elif all(c in df.columns for c in INIT_COLUMNS):
            init = df[list(INIT_COLUMNS)].to_numpy(dtype=np.float64)
        label = df["label"].to_numpy(dtype=np.float64) if "label" in df.columns else None
        reserved = {"entity_id", "week", "slot", "label", "init", *INIT_COLUMNS}
        names = [c for c in df.columns if c not in reserved]
        return cls(
            entity_ids=df["entity_id"].to_numpy(dtype=np.int64),
            weeks=df["week"].to_numpy(dtype=np.int64),
            slots=df["slot"].to_numpy(dtype=np.int64),
            feature_names=names,
            X=df[names].to_numpy(dtype=np.float64) if names else np.zeros((len(df), 0)),
            label=label,
            init=init,
        )
