"""Unified access to a world's inputs, in memory or from a CSV bundle.

The record triples (entity id, slot, value) mirror the CSV schemas
written by the city generator; congestion labels are sparse, speeds and
travel times dense.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..counterfeat import CounterMatrix
from ..errors import MissingFile, SchemaError
from ..roadgraph import RoadGraph, load_graph_dir

Records = tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class WorldData:
    graph: RoadGraph
    volumes: CounterMatrix
    labels: Records
    speeds: Records
    etas: Records
    slots_per_day: int = 96

    @property
    def n_slots(self) -> int:
        return self.volumes.n_slots

    def weeks(self) -> list[int]:
        return self.volumes.weeks()

    def week_of_slot(self, t: np.ndarray) -> np.ndarray:
        return self.volumes.slot_index[np.asarray(t, dtype=np.int64), 0]

    @classmethod
    def from_synth(cls, world) -> "WorldData":
        return cls(
            graph=world.graph,
            volumes=world.volumes,
            labels=world.labels_records(),
            speeds=world.speed_records(),
            etas=world.eta_records(),
            slots_per_day=world.config.slots_per_day,
        )


def _read_records(path: Path, columns: list[str], dtype) -> Records:
    if not path.exists():
        raise MissingFile(str(path))
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != columns:
        raise SchemaError(f"{path}: columns {list(df.columns)} != expected {columns}")
    return (
        df[columns[0]].to_numpy(dtype=np.int64),
        df[columns[1]].to_numpy(dtype=np.int64),
        df[columns[2]].to_numpy(dtype=dtype),
    )


def load_world(directory: str | Path) -> WorldData:
    """Load a CSV world bundle as written by the generator CLI."""
    d = Path(directory)
    graph = load_graph_dir(d)

    meta_path = d / "world_meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    slots_per_day = int(meta.get("slots_per_day", 96))

    cid, ct, cv = _read_records(d / "volumes.csv", ["counter_id", "t", "volume"], np.float64)
    counter_ids = np.array(sorted(graph.counters), dtype=np.int64)
    n_slots = int(meta.get("n_slots", ct.max() + 1 if len(ct) else 0))
    if n_slots < 2:
        raise SchemaError("world needs at least 2 slots of volume data")
    k = len(counter_ids)
    values = np.zeros((k, n_slots), dtype=np.float64)
    observed = np.zeros((k, n_slots), dtype=bool)
    row = np.searchsorted(counter_ids, cid)
    if np.any(row >= k) or np.any(counter_ids[np.minimum(row, k - 1)] != cid):
        raise SchemaError("volumes.csv references a counter id not in counters.csv")
    if np.any(ct < 0) or np.any(ct >= n_slots):
        raise SchemaError("volumes.csv slot index outside [0, n_slots)")
    values[row, ct] = cv
    observed[row, ct] = True
    slots_per_week = 7 * slots_per_day
    slot_index = np.column_stack(
        [np.arange(n_slots) // slots_per_week, np.arange(n_slots) % slots_per_week]
    )
    volumes = CounterMatrix(
        values=values, counter_ids=counter_ids, slot_index=slot_index, observed=observed
    )

    labels = _read_records(d / "labels_cc.csv", ["edge_id", "t", "class"], np.int64)
    speeds = _read_records(d / "speeds.csv", ["edge_id", "t", "speed"], np.float64)
    etas = _read_records(d / "eta.csv", ["ss_id", "t", "eta"], np.float64)
    return WorldData(
        graph=graph,
        volumes=volumes,
        labels=labels,
        speeds=speeds,
        etas=etas,
        slots_per_day=slots_per_day,
    )
