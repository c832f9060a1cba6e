"""Traffic regimes, guarded target encodings, and per-row init scores.

Encodings replace high-cardinality entity ids with label statistics
computed on the training split, conditioned on a discretized city-wide
traffic regime.  Every table enforces a minimum observation count before
an entry may be served; under-populated entries fall back to the entity's
unconditional statistics and finally to the city-wide statistics, so a
lookup always resolves.

For the classification task the per-entity payload is a Laplace-smoothed
class distribution and its log-probabilities, which double as the
boosting init score.  For the regression task the payload is a set of
interpolated travel-time quantiles; the conditional median is the init
score.  Speed statistics (median and 85th-percentile free-flow speed per
edge) follow the same guarded pattern without regime conditioning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .counterfeat import CounterMatrix, window_matrices
from .errors import DegenerateVolume, EmptyLabels, SchemaError, UnknownRegime

N_CLASSES = 3

LEVEL_DIRECT = 0
LEVEL_ENTITY = 1
LEVEL_GLOBAL = 2


def _interp_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Linear interpolation between closest order statistics."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyLabels("cannot take a quantile of nothing")
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac)


@dataclass
class TrafficRegime:
    """City-wide traffic state per slot, learned from training slots.

    The per-slot city volume s(t) is the sum over counters of the
    past-hour window sums.  Thresholds are the empirical quantiles of
    s(t) over training slots splitting it into ``n_clusters`` equal-mass
    buckets (the median for the binary case); a slot's regime is the
    bucket index of its s(t), with exact threshold hits assigned to the
    lower bucket.
    """

    thresholds: np.ndarray
    n_clusters: int
    slot_regime: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.slot_regime = np.asarray(self.slot_regime, dtype=np.int64)
        if not np.all(np.diff(self.thresholds) >= 0):
            raise SchemaError("regime thresholds must be sorted")
        if not np.all(np.isfinite(self.thresholds)):
            raise SchemaError("regime thresholds must be finite")

    def classify(self, s: np.ndarray) -> np.ndarray:
        """Bucket index per volume value; ties go to the lower bucket."""
        return np.searchsorted(self.thresholds, np.asarray(s, dtype=np.float64), side="left")

    def of_slot(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t >= len(self.slot_regime)):
            raise UnknownRegime(f"slot index out of range [0, {len(self.slot_regime)})")
        return self.slot_regime[t]

    def to_json(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "n_clusters": self.n_clusters,
            "slot_regime": self.slot_regime.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrafficRegime":
        return cls(
            thresholds=np.array(payload["thresholds"], dtype=np.float64),
            n_clusters=int(payload["n_clusters"]),
            slot_regime=np.array(payload["slot_regime"], dtype=np.int64),
        )


def citywide_volume(V: CounterMatrix, window: int = 4) -> np.ndarray:
    """s(t): sum over counters of the past-hour window sums."""
    _, wsum = window_matrices(V, window)
    return wsum.sum(axis=0)


def fit_regime(
    V: CounterMatrix,
    n_clusters: int = 2,
    train_slots: np.ndarray | None = None,
    window: int = 4,
) -> TrafficRegime:
    """Learn regime thresholds on training slots, classify every slot.

    ``train_slots`` is a boolean mask over the matrix columns; quantiles
    are learned there but the returned regime assigns every slot.
    """
    if n_clusters not in (2, 3, 4):
        raise SchemaError(f"n_clusters must be 2, 3, or 4, got {n_clusters}")
    s = citywide_volume(V, window=window)
    train_s = s if train_slots is None else s[train_slots]
    if len(train_s) < 2:
        raise DegenerateVolume("need at least 2 training slots")
    if float(train_s.max()) == float(train_s.min()):
        raise DegenerateVolume("citywide volume is constant over training slots")
    qs = np.arange(1, n_clusters) / n_clusters
    thresholds = np.quantile(train_s, qs, method="linear")
    regime = TrafficRegime(
        thresholds=thresholds, n_clusters=n_clusters, slot_regime=np.zeros(len(s), dtype=np.int64)
    )
    regime.slot_regime = regime.classify(s)
    return regime


def constant_regime(n_slots: int) -> TrafficRegime:
    """Single-bucket regime; useful when conditioning is disabled."""
    return TrafficRegime(
        thresholds=np.array([], dtype=np.float64),
        n_clusters=1,
        slot_regime=np.zeros(n_slots, dtype=np.int64),
    )


@dataclass
class EncodingTable:
    """(entity, regime) -> payload with a count guard and fallback chain.

    ``lookup`` never fails: entries (direct or entity-level) whose count
    is below ``min_count`` are skipped in favour of the next level, and
    the global payload is always served as terminus.
    """

    kind: str
    min_count: int
    n_clusters: int
    entries: dict = field(default_factory=dict)
    entity_fallback: dict = field(default_factory=dict)
    global_fallback: dict = field(default_factory=dict)

    def lookup(self, entity: int, regime: int) -> tuple[dict, int]:
        """Return (payload, level); level 0 direct, 1 entity, 2 global."""
        if not 0 <= regime < self.n_clusters:
            raise UnknownRegime(f"regime {regime} outside [0, {self.n_clusters})")
        payload = self.entries.get((entity, regime))
        if payload is not None and payload["count"] >= self.min_count:
            return payload, LEVEL_DIRECT
        payload = self.entity_fallback.get(entity)
        if payload is not None and payload["count"] >= self.min_count:
            return payload, LEVEL_ENTITY
        return self.global_fallback, LEVEL_GLOBAL

    def lookup_entity(self, entity: int) -> tuple[dict, int]:
        """Unconditional (all-regime) statistics with the same count guard."""
        payload = self.entity_fallback.get(entity)
        if payload is not None and payload["count"] >= self.min_count:
            return payload, LEVEL_ENTITY
        return self.global_fallback, LEVEL_GLOBAL

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "min_count": self.min_count,
            "n_clusters": self.n_clusters,
            "entries": {f"{e}:{r}": p for (e, r), p in sorted(self.entries.items())},
            "entity_fallback": {str(e): p for e, p in sorted(self.entity_fallback.items())},
            "global_fallback": self.global_fallback,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EncodingTable":
        entries = {}
        for key, p in payload["entries"].items():
            e, r = key.split(":")
            entries[(int(e), int(r))] = p
        return cls(
            kind=payload["kind"],
            min_count=int(payload["min_count"]),
            n_clusters=int(payload["n_clusters"]),
            entries=entries,
            entity_fallback={int(e): p for e, p in payload["entity_fallback"].items()},
            global_fallback=payload["global_fallback"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "EncodingTable":
        return cls.from_json(json.loads(Path(path).read_text()))


def _class_payload(counts: np.ndarray, alpha: float) -> dict:
    n = int(counts.sum())
    probs = (counts + alpha) / (n + N_CLASSES * alpha)
    return {
        "probs": probs.tolist(),
        "logits": np.log(probs).tolist(),
        "count": n,
    }


def fit_class_encoding(
    labels: tuple[np.ndarray, np.ndarray, np.ndarray],
    regime: TrafficRegime,
    min_count: int = 5,
    alpha: float = 1.0,
) -> EncodingTable:
    """Smoothed class distributions per (edge, regime of the feature slot).

    ``labels`` is (edge_id, t, class) arrays for the training split; a
    record labelled at slot t is conditioned on the regime at t - 1, the
    slot its features come from, so records at t = 0 are skipped.
    Probabilities use Laplace smoothing (n_c + alpha) / (n + 3 alpha) and
    are stored together with their logs.  Fallbacks: the edge's all-regime
    distribution, then the city-wide distribution.
    """
    if alpha <= 0:
        raise SchemaError("alpha must be > 0")
    edge_ids, ts, classes = (np.asarray(a) for a in labels)
    if edge_ids.size == 0:
        raise EmptyLabels("no class labels to encode")
    usable = ts >= 1
    edge_ids, ts, classes = edge_ids[usable], ts[usable], classes[usable]
    if edge_ids.size == 0:
        raise EmptyLabels("no class labels after dropping slot-0 records")
    regimes = regime.of_slot(ts - 1)

    table = EncodingTable(kind="class", min_count=min_count, n_clusters=regime.n_clusters)
    pair_keys = {}
    for e, r in zip(edge_ids.tolist(), regimes.tolist()):
        pair_keys.setdefault((e, r), len(pair_keys))
    pair_counts = np.zeros((len(pair_keys), N_CLASSES), dtype=np.int64)
    idx = np.array([pair_keys[(e, r)] for e, r in zip(edge_ids.tolist(), regimes.tolist())])
    np.add.at(pair_counts, (idx, classes.astype(np.int64)), 1)
    for (e, r), i in pair_keys.items():
        table.entries[(e, r)] = _class_payload(pair_counts[i], alpha)

    entity_keys = {}
    for e in edge_ids.tolist():
        entity_keys.setdefault(e, len(entity_keys))
    entity_counts = np.zeros((len(entity_keys), N_CLASSES), dtype=np.int64)
    idx = np.array([entity_keys[e] for e in edge_ids.tolist()])
    np.add.at(entity_counts, (idx, classes.astype(np.int64)), 1)
    for e, i in entity_keys.items():
        table.entity_fallback[e] = _class_payload(entity_counts[i], alpha)

    global_counts = np.bincount(classes.astype(np.int64), minlength=N_CLASSES)
    table.global_fallback = _class_payload(global_counts, alpha)
    return table


def fit_eta_encoding(
    etas: tuple[np.ndarray, np.ndarray, np.ndarray],
    regime: TrafficRegime,
    min_count: int = 10,
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75),
) -> EncodingTable:
    """Travel-time quantiles per (supersegment, regime of the feature slot).

    Quantiles interpolate linearly between order statistics and must
    include the median (it is the regression init score).  Fallbacks
    mirror :func:`fit_class_encoding`.
    """
    if 0.5 not in quantiles:
        raise SchemaError("quantiles must include the median 0.5")
    if any(not 0 < q < 1 for q in quantiles):
        raise SchemaError("quantiles must lie in (0, 1)")
    ss_ids, ts, values = (np.asarray(a) for a in etas)
    if ss_ids.size == 0:
        raise EmptyLabels("no travel times to encode")
    usable = ts >= 1
    ss_ids, ts, values = ss_ids[usable], ts[usable], values[usable]
    if ss_ids.size == 0:
        raise EmptyLabels("no travel times after dropping slot-0 records")
    regimes = regime.of_slot(ts - 1)

    def payload(vals: np.ndarray) -> dict:
        srt = np.sort(vals)
        return {
            "quantiles": {str(q): _interp_quantile(srt, q) for q in quantiles},
            "count": int(len(vals)),
        }

    table = EncodingTable(kind="eta", min_count=min_count, n_clusters=regime.n_clusters)
    order = np.lexsort((ts, regimes, ss_ids))
    ss_s, reg_s, val_s = ss_ids[order], regimes[order], values[order]
    boundaries = np.flatnonzero((np.diff(ss_s) != 0) | (np.diff(reg_s) != 0)) + 1
    for chunk_idx in np.split(np.arange(len(ss_s)), boundaries):
        e, r = int(ss_s[chunk_idx[0]]), int(reg_s[chunk_idx[0]])
        table.entries[(e, r)] = payload(val_s[chunk_idx])
    ent_boundaries = np.flatnonzero(np.diff(ss_s)) + 1
    for chunk_idx in np.split(np.arange(len(ss_s)), ent_boundaries):
        e = int(ss_s[chunk_idx[0]])
        table.entity_fallback[e] = payload(val_s[chunk_idx])
    table.global_fallback = payload(values)
    return table


@dataclass
class SpeedStats:
    """Per-edge median and free-flow (85th percentile) speed with a
    city-wide fallback for under-observed edges."""

    min_count: int
    per_edge: dict = field(default_factory=dict)
    citywide: dict = field(default_factory=dict)

    def lookup(self, edge: int) -> tuple[dict, int]:
        stats = self.per_edge.get(edge)
        if stats is not None and stats["n_obs"] >= self.min_count:
            return stats, LEVEL_ENTITY
        return self.citywide, LEVEL_GLOBAL

    def to_json(self) -> dict:
        return {
            "min_count": self.min_count,
            "per_edge": {str(e): s for e, s in sorted(self.per_edge.items())},
            "citywide": self.citywide,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SpeedStats":
        return cls(
            min_count=int(payload["min_count"]),
            per_edge={int(e): s for e, s in payload["per_edge"].items()},
            citywide=payload["citywide"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SpeedStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_speed_stats(
    speeds: tuple[np.ndarray, np.ndarray, np.ndarray], min_count: int = 5
) -> SpeedStats:
    """Median and 85th-percentile speed per edge from training records."""
    edge_ids, _, values = (np.asarray(a) for a in speeds)
    if edge_ids.size == 0:
        raise EmptyLabels("no speed records")

    def stats(vals: np.ndarray) -> dict:
        srt = np.sort(vals)
        return {
            "median_speed": _interp_quantile(srt, 0.5),
            "freeflow_speed": _interp_quantile(srt, 0.85),
            "n_obs": int(len(vals)),
        }

    table = SpeedStats(min_count=min_count)
    order = np.argsort(edge_ids, kind="stable")
    e_s, v_s = edge_ids[order], values[order]
    boundaries = np.flatnonzero(np.diff(e_s)) + 1
    for chunk_idx in np.split(np.arange(len(e_s)), boundaries):
        table.per_edge[int(e_s[chunk_idx[0]])] = stats(v_s[chunk_idx])
    table.citywide = stats(values)
    return table


def build_init_scores(
    task: str,
    table: EncodingTable,
    rows: tuple[np.ndarray, np.ndarray],
    class_weights=None,
) -> np.ndarray:
    """Per-row boosting baselines from an encoding table.

    core: a 3-vector of log-probabilities per row.  ``class_weights`` is
    validated but never folded into the baseline; weighting belongs to the
    loss, otherwise the rare classes would be emphasized twice.
    extended: the conditional median travel time per row.
    """
    entities, regimes = (np.asarray(a) for a in rows)
    if task == "core":
        if table.kind != "class":
            raise SchemaError("core init scores need a class encoding table")
        if class_weights is not None and np.any(np.asarray(class_weights, dtype=float) <= 0):
            raise SchemaError("class weights must be positive")
        out = np.empty((len(entities), N_CLASSES), dtype=np.float64)
        memo = {}
        for i, (e, r) in enumerate(zip(entities.tolist(), regimes.tolist())):
            key = (e, r)
            logits = memo.get(key)
            if logits is None:
                payload, _ = table.lookup(e, r)
                logits = payload["logits"]
                memo[key] = logits
            out[i] = logits
        return out
    if task == "extended":
        if table.kind != "eta":
            raise SchemaError("extended init scores need an eta encoding table")
        out = np.empty(len(entities), dtype=np.float64)
        memo = {}
        for i, (e, r) in enumerate(zip(entities.tolist(), regimes.tolist())):
            key = (e, r)
            med = memo.get(key)
            if med is None:
                payload, _ = table.lookup(e, r)
                med = payload["quantiles"]["0.5"]
                memo[key] = med
            out[i] = med
        return out
    raise SchemaError(f"unknown task {task!r}")
