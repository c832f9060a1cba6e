"""Artifact fitting and tabular dataset assembly.

Rows predict the label at slot t+1 from counter data at slot t: the
label's week decides which split a row belongs to, and label slot 0 is
dropped because it has no preceding counter observation.

All fitted inputs (PCA models, weight matrices, traffic regime, target
encodings, speed statistics) are learned strictly on training weeks and
then applied unchanged when assembling any split, which is the leakage
firewall for the label-derived encodings.

Core feature schema (44 columns, fixed order):

    nc_last nc_sum_1h nc_dist                       nearest-counter window
    ctx_softmax_last ctx_softmax_sum
    ctx_knn_last ctx_knn_sum                        spatial contexts
    pc_last_0..7  pc_sum_0..4                       city PCA scores
    city_last_total city_last_mean city_last_median
    city_sum_total city_sum_mean city_sum_median    city aggregates
    regime                                          traffic regime id
    x y road_class                                  static edge attributes
    te_p_green te_p_yellow te_p_red
    te_logit_green te_logit_yellow te_logit_red
    te_count te_level                               regime-conditional encoding
    te_any_p_green te_any_p_yellow te_any_p_red     unconditional encoding
    speed_median speed_freeflow speed_ratio         per-edge speed statistics

Extended feature schema (31 columns): medoid/start/end coordinates and
length, the same window, context, PCA, and regime features keyed by the
counter nearest to the medoid, and the regime-conditional travel-time
quantiles eta_q25 eta_q50 eta_q75.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..counterfeat import (
    KNN_UNIFORM,
    SOFTMAX_INVERSE_DISTANCE,
    CounterMatrix,
    PCAModel,
    SpatialWeightMatrix,
    build_weight_matrix,
    context_of_matrix,
    fit_pca,
    project_pca,
    window_matrices,
)
from ..encodings import (
    EncodingTable,
    SpeedStats,
    TrafficRegime,
    build_init_scores,
    fit_class_encoding,
    fit_eta_encoding,
    fit_regime,
    fit_speed_stats,
)
from ..errors import DanglingReference, MissingArtifact, SchemaError, SlotOutOfRange
from ..roadgraph import nearest_counter_index, supersegment_geometry
from ..syncity import daypart_of_slot, weekpart_of_slot
from ..tables import FeatureTable
from .split import SplitSpec
from .worlddata import WorldData

CORE = "core"
EXTENDED = "extended"

CORE_ENCODING_COLUMNS = (
    "te_p_green", "te_p_yellow", "te_p_red",
    "te_logit_green", "te_logit_yellow", "te_logit_red",
    "te_count", "te_level",
    "te_any_p_green", "te_any_p_yellow", "te_any_p_red",
    "speed_median", "speed_freeflow", "speed_ratio",
)
EXTENDED_ENCODING_COLUMNS = ("eta_q25", "eta_q50", "eta_q75")


@dataclass(frozen=True)
class PipelineConfig:
    task: str = CORE
    n_pc_last: int = 8
    n_pc_sum: int = 5
    window: int = 4
    knn_k: int = 5
    n_clusters: int | None = None
    min_count: int | None = None
    alpha: float = 1.0
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75)
    class_weights: tuple[float, float, float] = (0.1, 0.3, 0.6)

    def __post_init__(self):
        if self.task not in (CORE, EXTENDED):
            raise SchemaError(f"unknown task {self.task!r}")

    @property
    def resolved_n_clusters(self) -> int:
        if self.n_clusters is not None:
            return self.n_clusters
        return 2 if self.task == CORE else 3

    @property
    def resolved_min_count(self) -> int:
        if self.min_count is not None:
            return self.min_count
        return 5 if self.task == CORE else 10

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "n_pc_last": self.n_pc_last,
            "n_pc_sum": self.n_pc_sum,
            "window": self.window,
            "knn_k": self.knn_k,
            "n_clusters": self.n_clusters,
            "min_count": self.min_count,
            "alpha": self.alpha,
            "quantiles": list(self.quantiles),
            "class_weights": list(self.class_weights),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "PipelineConfig":
        payload = dict(payload)
        payload["quantiles"] = tuple(payload["quantiles"])
        payload["class_weights"] = tuple(payload["class_weights"])
        return cls(**payload)


@dataclass
class ArtifactBundle:
    """Everything fitted on the training weeks that assembly needs."""

    config: PipelineConfig
    split: SplitSpec
    pca_last: PCAModel
    pca_sum: PCAModel
    b_softmax: SpatialWeightMatrix
    b_knn: SpatialWeightMatrix
    regime: TrafficRegime
    class_enc: EncodingTable | None = None
    eta_enc: EncodingTable | None = None
    speed_stats: SpeedStats | None = None

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "config": self.config.to_json(),
            "train_weeks": list(self.split.train_weeks),
            "valid_weeks": list(self.split.valid_weeks),
            "has_class_enc": self.class_enc is not None,
            "has_eta_enc": self.eta_enc is not None,
            "has_speed_stats": self.speed_stats is not None,
        }
        (d / "bundle_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        self.pca_last.save(d / "pca_last.json")
        self.pca_sum.save(d / "pca_sum.json")
        np.save(d / "b_softmax.npy", self.b_softmax.weights)
        np.save(d / "b_knn.npy", self.b_knn.weights)
        np.save(d / "counter_ids.npy", self.b_softmax.counter_ids)
        (d / "regime.json").write_text(json.dumps(self.regime.to_json(), sort_keys=True))
        if self.class_enc is not None:
            self.class_enc.save(d / "enc_class.json")
        if self.eta_enc is not None:
            self.eta_enc.save(d / "enc_eta.json")
        if self.speed_stats is not None:
            self.speed_stats.save(d / "speed_stats.json")

    @classmethod
    def load(cls, directory: str | Path) -> "ArtifactBundle":
        d = Path(directory)
        meta = json.loads((d / "bundle_meta.json").read_text())
        config = PipelineConfig.from_json(meta["config"])
        ids = np.load(d / "counter_ids.npy")
        return cls(
            config=config,
            split=SplitSpec(tuple(meta["train_weeks"]), tuple(meta["valid_weeks"])),
            pca_last=PCAModel.load(d / "pca_last.json"),
            pca_sum=PCAModel.load(d / "pca_sum.json"),
            b_softmax=SpatialWeightMatrix(
                np.load(d / "b_softmax.npy"), ids, SOFTMAX_INVERSE_DISTANCE
            ),
            b_knn=SpatialWeightMatrix(np.load(d / "b_knn.npy"), ids, KNN_UNIFORM),
            regime=TrafficRegime.from_json(json.loads((d / "regime.json").read_text())),
            class_enc=EncodingTable.load(d / "enc_class.json")
            if meta["has_class_enc"]
            else None,
            eta_enc=EncodingTable.load(d / "enc_eta.json") if meta["has_eta_enc"] else None,
            speed_stats=SpeedStats.load(d / "speed_stats.json")
            if meta["has_speed_stats"]
            else None,
        )


def _filter_train_records(records, world: WorldData, train_weeks) -> tuple:
    ids, ts, vals = records
    keep = np.isin(world.week_of_slot(ts), np.asarray(train_weeks, dtype=np.int64))
    return ids[keep], ts[keep], vals[keep]


def fit_artifacts(world: WorldData, split: SplitSpec, config: PipelineConfig) -> ArtifactBundle:
    """Fit every model and encoding on the training weeks only."""
    volumes = world.volumes
    train_mask = volumes.week_mask(split.train_weeks)
    if train_mask.sum() < 2:
        raise SchemaError("training split covers fewer than 2 slots")
    last, wsum = window_matrices(volumes, config.window)

    def train_matrix(values: np.ndarray) -> CounterMatrix:
        return CounterMatrix(
            values=values[:, train_mask],
            counter_ids=volumes.counter_ids,
            slot_index=volumes.slot_index[train_mask],
        )

    pca_last = fit_pca(train_matrix(last), config.n_pc_last)
    pca_sum = fit_pca(train_matrix(wsum), config.n_pc_sum)
    b_softmax = build_weight_matrix(world.graph, SOFTMAX_INVERSE_DISTANCE)
    b_knn = build_weight_matrix(world.graph, KNN_UNIFORM, knn_k=config.knn_k)
    regime = fit_regime(
        volumes, config.resolved_n_clusters, train_slots=train_mask, window=config.window
    )

    bundle = ArtifactBundle(
        config=config,
        split=split,
        pca_last=pca_last,
        pca_sum=pca_sum,
        b_softmax=b_softmax,
        b_knn=b_knn,
        regime=regime,
    )
    if config.task == CORE:
        bundle.class_enc = fit_class_encoding(
            _filter_train_records(world.labels, world, split.train_weeks),
            regime,
            min_count=config.resolved_min_count,
            alpha=config.alpha,
        )
        bundle.speed_stats = fit_speed_stats(
            _filter_train_records(world.speeds, world, split.train_weeks),
            min_count=config.resolved_min_count,
        )
    else:
        bundle.eta_enc = fit_eta_encoding(
            _filter_train_records(world.etas, world, split.train_weeks),
            regime,
            min_count=config.resolved_min_count,
            quantiles=config.quantiles,
        )
    return bundle


@dataclass
class _SlotFeatures:
    """Per-slot matrices shared by every row of the same feature slot."""

    last: np.ndarray
    wsum: np.ndarray
    ctx_softmax_last: np.ndarray
    ctx_softmax_sum: np.ndarray
    ctx_knn_last: np.ndarray
    ctx_knn_sum: np.ndarray
    scores_last: np.ndarray
    scores_sum: np.ndarray
    city: dict = field(default_factory=dict)


def _slot_features(world: WorldData, bundle: ArtifactBundle) -> _SlotFeatures:
    last, wsum = window_matrices(world.volumes, bundle.config.window)
    sf = _SlotFeatures(
        last=last,
        wsum=wsum,
        ctx_softmax_last=context_of_matrix(last, bundle.b_softmax),
        ctx_softmax_sum=context_of_matrix(wsum, bundle.b_softmax),
        ctx_knn_last=context_of_matrix(last, bundle.b_knn),
        ctx_knn_sum=context_of_matrix(wsum, bundle.b_knn),
        scores_last=project_pca(bundle.pca_last, last.T),
        scores_sum=project_pca(bundle.pca_sum, wsum.T),
    )
    sf.city = {
        "city_last_total": last.sum(axis=0),
        "city_last_mean": last.mean(axis=0),
        "city_last_median": np.median(last, axis=0),
        "city_sum_total": wsum.sum(axis=0),
        "city_sum_mean": wsum.mean(axis=0),
        "city_sum_median": np.median(wsum, axis=0),
    }
    return sf


def _select_label_rows(world, entity_ids, ts, weeks):
    """Keep label slots >= 1 inside the requested weeks, sorted by (t, id)."""
    n_slots = world.n_slots
    if np.any(ts >= n_slots) or np.any(ts < 0):
        raise SlotOutOfRange(f"label slot outside [0, {n_slots})")
    keep = ts >= 1
    if weeks is not None:
        keep &= np.isin(world.week_of_slot(ts), np.asarray(sorted(weeks), dtype=np.int64))
    idx = np.flatnonzero(keep)
    order = np.lexsort((entity_ids[idx], ts[idx]))
    return idx[order]


def _common_columns(sf: _SlotFeatures, bundle: ArtifactBundle, nc_idx, nc_dist, tf, city=True):
    """(name, values) pairs shared by both tasks, in schema order.

    The extended schema skips the city aggregates (``city=False``)."""
    cols = [
        ("nc_last", sf.last[nc_idx, tf]),
        ("nc_sum_1h", sf.wsum[nc_idx, tf]),
        ("nc_dist", nc_dist),
        ("ctx_softmax_last", sf.ctx_softmax_last[tf, nc_idx]),
        ("ctx_softmax_sum", sf.ctx_softmax_sum[tf, nc_idx]),
        ("ctx_knn_last", sf.ctx_knn_last[tf, nc_idx]),
        ("ctx_knn_sum", sf.ctx_knn_sum[tf, nc_idx]),
    ]
    for i in range(bundle.config.n_pc_last):
        cols.append((f"pc_last_{i}", sf.scores_last[tf, i]))
    for i in range(bundle.config.n_pc_sum):
        cols.append((f"pc_sum_{i}", sf.scores_sum[tf, i]))
    if city:
        for name, series in sf.city.items():
            cols.append((name, series[tf]))
    cols.append(("regime", bundle.regime.slot_regime[tf].astype(np.float64)))
    return cols


def assemble_core(
    world: WorldData, bundle: ArtifactBundle, weeks=None
) -> FeatureTable:
    """One row per labelled (edge, t+1) pair in the requested weeks."""
    if bundle.class_enc is None or bundle.speed_stats is None:
        raise MissingArtifact("core assembly needs class encodings and speed statistics")
    edge_rec, t_rec, cls_rec = world.labels
    sel = _select_label_rows(world, edge_rec, t_rec, weeks)
    edges, t_label, labels = edge_rec[sel], t_rec[sel], cls_rec[sel]
    tf = t_label - 1

    edge_ids_sorted = np.array(sorted(world.graph.edges), dtype=np.int64)
    pos = np.searchsorted(edge_ids_sorted, edges)
    if np.any(pos >= len(edge_ids_sorted)) or np.any(
        edge_ids_sorted[np.minimum(pos, len(edge_ids_sorted) - 1)] != edges
    ):
        raise DanglingReference("label references an edge id not in the graph")

    start_pos = np.array(
        [
            [world.graph.nodes[world.graph.edges[e].start_node].position.x,
             world.graph.nodes[world.graph.edges[e].start_node].position.y]
            for e in edge_ids_sorted
        ]
    )
    road_class = np.array(
        [world.graph.edges[e].road_class for e in edge_ids_sorted], dtype=np.float64
    )
    nc_all, nc_dist_all = nearest_counter_index(start_pos, world.graph)

    sf = _slot_features(world, bundle)
    nc_idx = nc_all[pos]
    cols = _common_columns(sf, bundle, nc_idx, nc_dist_all[pos], tf)
    cols.append(("x", start_pos[pos, 0]))
    cols.append(("y", start_pos[pos, 1]))
    cols.append(("road_class", road_class[pos]))

    regimes = bundle.regime.slot_regime[tf]
    n = len(edges)
    te = {name: np.empty(n) for name in CORE_ENCODING_COLUMNS}
    cache: dict[tuple[int, int], tuple] = {}
    for i in range(n):
        key = (int(edges[i]), int(regimes[i]))
        hit = cache.get(key)
        if hit is None:
            payload, level = bundle.class_enc.lookup(*key)
            any_payload, _ = bundle.class_enc.lookup_entity(key[0])
            stats, _ = bundle.speed_stats.lookup(key[0])
            hit = (
                payload["probs"], payload["logits"], payload["count"], level,
                any_payload["probs"],
                stats["median_speed"], stats["freeflow_speed"],
            )
            cache[key] = hit
        probs, logits, count, level, any_probs, med, ff = hit
        te["te_p_green"][i], te["te_p_yellow"][i], te["te_p_red"][i] = probs
        te["te_logit_green"][i], te["te_logit_yellow"][i], te["te_logit_red"][i] = logits
        te["te_count"][i] = count
        te["te_level"][i] = level
        te["te_any_p_green"][i], te["te_any_p_yellow"][i], te["te_any_p_red"][i] = any_probs
        te["speed_median"][i] = med
        te["speed_freeflow"][i] = ff
        te["speed_ratio"][i] = med / ff if ff > 0 else 1.0
    for name in CORE_ENCODING_COLUMNS:
        cols.append((name, te[name]))

    init = build_init_scores("core", bundle.class_enc, (edges, regimes))
    names = [name for name, _ in cols]
    X = np.column_stack([np.asarray(v, dtype=np.float64) for _, v in cols]) if n else np.zeros((0, len(cols)))
    return FeatureTable(
        entity_ids=edges,
        weeks=world.volumes.slot_index[t_label, 0],
        slots=world.volumes.slot_index[t_label, 1],
        feature_names=names,
        X=X,
        label=labels.astype(np.float64),
        init=init,
        meta={"task": CORE},
    )


def assemble_extended(
    world: WorldData, bundle: ArtifactBundle, weeks=None
) -> FeatureTable:
    """One row per (supersegment, t+1) with an observed travel time."""
    if bundle.eta_enc is None:
        raise MissingArtifact("extended assembly needs travel-time encodings")
    ss_rec, t_rec, eta_rec = world.etas
    sel = _select_label_rows(world, ss_rec, t_rec, weeks)
    ss, t_label, labels = ss_rec[sel], t_rec[sel], eta_rec[sel]
    tf = t_label - 1

    ss_ids_sorted = np.array(sorted(world.graph.supersegments), dtype=np.int64)
    pos = np.searchsorted(ss_ids_sorted, ss)
    if np.any(pos >= len(ss_ids_sorted)) or np.any(
        ss_ids_sorted[np.minimum(pos, len(ss_ids_sorted) - 1)] != ss
    ):
        raise DanglingReference("travel time references an unknown supersegment id")

    geo = np.zeros((len(ss_ids_sorted), 7))
    for j, sid in enumerate(ss_ids_sorted):
        medoid, start, end, length = supersegment_geometry(
            world.graph.supersegments[int(sid)], world.graph
        )
        geo[j] = [medoid.x, medoid.y, start.x, start.y, end.x, end.y, length]
    nc_all, nc_dist_all = nearest_counter_index(geo[:, :2], world.graph)

    sf = _slot_features(world, bundle)
    nc_idx = nc_all[pos]
    cols = [
        ("medoid_x", geo[pos, 0]),
        ("medoid_y", geo[pos, 1]),
        ("start_x", geo[pos, 2]),
        ("start_y", geo[pos, 3]),
        ("end_x", geo[pos, 4]),
        ("end_y", geo[pos, 5]),
        ("length", geo[pos, 6]),
    ]
    cols.extend(_common_columns(sf, bundle, nc_idx, nc_dist_all[pos], tf, city=False))

    regimes = bundle.regime.slot_regime[tf]
    n = len(ss)
    qcols = {name: np.empty(n) for name in EXTENDED_ENCODING_COLUMNS}
    cache: dict[tuple[int, int], tuple] = {}
    for i in range(n):
        key = (int(ss[i]), int(regimes[i]))
        hit = cache.get(key)
        if hit is None:
            payload, _ = bundle.eta_enc.lookup(*key)
            q = payload["quantiles"]
            hit = (q["0.25"], q["0.5"], q["0.75"])
            cache[key] = hit
        qcols["eta_q25"][i], qcols["eta_q50"][i], qcols["eta_q75"][i] = hit
    for name in EXTENDED_ENCODING_COLUMNS:
        cols.append((name, qcols[name]))

    init = build_init_scores("extended", bundle.eta_enc, (ss, regimes))
    names = [name for name, _ in cols]
    X = np.column_stack([np.asarray(v, dtype=np.float64) for _, v in cols]) if n else np.zeros((0, len(cols)))
    return FeatureTable(
        entity_ids=ss,
        weeks=world.volumes.slot_index[t_label, 0],
        slots=world.volumes.slot_index[t_label, 1],
        feature_names=names,
        X=X,
        label=labels.astype(np.float64),
        init=init,
        meta={"task": EXTENDED},
    )


def assemble(world: WorldData, bundle: ArtifactBundle, weeks=None) -> FeatureTable:
    if bundle.config.task == CORE:
        return assemble_core(world, bundle, weeks)
    return assemble_extended(world, bundle, weeks)


def pca_scatter(
    world: WorldData, split: SplitSpec | None = None, window: int = 4
) -> pd.DataFrame:
    """Two-component projection of every last-volume snapshot.

    Output columns: t, pc1, pc2, weekpart, daypart.  The model is fit on
    the training weeks when a split is given, otherwise on all slots.
    """
    volumes = world.volumes
    last, _ = window_matrices(volumes, window)
    mask = (
        volumes.week_mask(split.train_weeks)
        if split is not None
        else np.ones(volumes.n_slots, dtype=bool)
    )
    model = fit_pca(
        CounterMatrix(
            values=last[:, mask],
            counter_ids=volumes.counter_ids,
            slot_index=volumes.slot_index[mask],
        ),
        c=2,
    )
    scores = project_pca(model, last.T)
    ts = np.arange(volumes.n_slots)
    return pd.DataFrame(
        {
            "t": ts,
            "pc1": scores[:, 0],
            "pc2": scores[:, 1],
            "weekpart": [weekpart_of_slot(int(t), world.slots_per_day) for t in ts],
            "daypart": [daypart_of_slot(int(t), world.slots_per_day) for t in ts],
        }
    )
