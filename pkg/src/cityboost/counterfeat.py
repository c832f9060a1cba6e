"""Counter time-series featurization, covariance PCA, and spatial weighting.

The city's counter readings form a k x t matrix (rows = counters, columns
= 15-minute slots).  Three kinds of context features are derived from it:

* window features: the very last measurement and the past-hour sum per
  counter, with explicit missing-data rules;
* a city-wide traffic context: principal components of the k x k counter
  covariance, so each component is a time series of scores.  Two models
  are fit in the pipeline, one on last-value snapshots and one on
  past-hour-sum snapshots;
* a spatially weighted context: a row-stochastic k x k relevance matrix B
  over counters (softmax of inverse distances, or uniform k-nearest
  neighbours) multiplied into the volume matrix, giving each counter the
  weighted volume of its neighbourhood.

Fitted models are immutable; projection and context multiplication are
pure and safe to run data-parallel over timesteps.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    InvalidK,
    SchemaError,
    TooFewCounters,
)
from .roadgraph import RoadGraph

logger = logging.getLogger(__name__)

# Distance floor for coincident counters in the inverse-distance softmax.
DISTANCE_EPS = 1e-6

SOFTMAX_INVERSE_DISTANCE = "softmax-inverse-distance"
KNN_UNIFORM = "knn-uniform"
WEIGHTING_METHODS = (SOFTMAX_INVERSE_DISTANCE, KNN_UNIFORM)


@dataclass
class CounterMatrix:
    """k x t volume matrix with explicit observation flags.

    ``slot_index`` tags every column with (week, slot-within-week) so that
    temporal splits can select columns by week.  Unobserved entries hold 0
    in ``values`` and False in ``observed``.
    """

    values: np.ndarray
    counter_ids: np.ndarray
    slot_index: np.ndarray
    observed: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.counter_ids = np.asarray(self.counter_ids, dtype=np.int64)
        self.slot_index = np.asarray(self.slot_index, dtype=np.int64)
        if self.observed is None:
            self.observed = np.ones(self.values.shape, dtype=bool)
        self.observed = np.asarray(self.observed, dtype=bool)
        k, t = self.values.shape
        if k < 1 or t < 2:
            raise SchemaError(f"counter matrix must be at least 1 x 2, got {k} x {t}")
        if self.counter_ids.shape != (k,):
            raise SchemaError("counter_ids length must match the row count")
        if self.slot_index.shape != (t, 2):
            raise SchemaError("slot_index must be a (t, 2) array of (week, slot)")
        if self.observed.shape != (k, t):
            raise SchemaError("observed mask must match the value shape")
        obs_vals = self.values[self.observed]
        if obs_vals.size and (not np.all(np.isfinite(obs_vals)) or obs_vals.min() < 0):
            raise SchemaError("observed volumes must be finite and >= 0")

    @property
    def n_counters(self) -> int:
        return self.values.shape[0]

    @property
    def n_slots(self) -> int:
        return self.values.shape[1]

    def weeks(self) -> list[int]:
        return sorted(set(self.slot_index[:, 0].tolist()))

    def select_slots(self, mask: np.ndarray) -> "CounterMatrix":
        """Column subset; mask is boolean over slots."""
        return CounterMatrix(
            values=self.values[:, mask],
            counter_ids=self.counter_ids,
            slot_index=self.slot_index[mask],
            observed=self.observed[:, mask],
        )

    def week_mask(self, weeks) -> np.ndarray:
        wanted = set(int(w) for w in weeks)
        return np.array([int(w) in wanted for w in self.slot_index[:, 0]], dtype=bool)

    def missingness_rate(self) -> np.ndarray:
        """Per-counter fraction of unobserved slots."""
        return 1.0 - self.observed.mean(axis=1)


@dataclass(frozen=True)
class FeatureConfig:
    """Counts of principal components and the summation window (slots)."""

    n_pc_last: int = 8
    n_pc_sum: int = 5
    window: int = 4

    def __post_init__(self):
        if self.n_pc_last < 1 or self.n_pc_sum < 1:
            raise SchemaError("principal component counts must be >= 1")
        if self.window < 1:
            raise SchemaError("window must be >= 1")


def window_features(series, t: int, window: int) -> tuple[float, float]:
    """(last, window_sum) for one counter series at slot t.

    The window covers slots max(0, t-window+1)..t.  Missing entries (None
    or NaN) contribute 0 to the sum; ``last`` is the value at t, falling
    back to the most recent observed value inside the window, 0 if none.
    """
    if t < 0 or window < 1:
        raise SchemaError(f"need t >= 0 and window >= 1, got t={t}, window={window}")
    lo = max(0, t - window + 1)
    last = 0.0
    total = 0.0
    for i in range(lo, t + 1):
        v = series[i]
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        total += float(v)
        last = float(v)
    return last, total


def window_matrices(cm: CounterMatrix, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized window features for every counter and slot.

    Returns (last, window_sum), both k x t, following the same missing
    rules as :func:`window_features`.
    """
    if window < 1:
        raise SchemaError("window must be >= 1")
    k, t = cm.values.shape
    vals = np.where(cm.observed, cm.values, 0.0)

    # Direct per-window summation; a cumsum difference would suffer
    # catastrophic cancellation when magnitudes vary wildly.
    padded = np.concatenate([np.zeros((k, window - 1)), vals], axis=1)
    wsum = np.lib.stride_tricks.sliding_window_view(padded, window, axis=1).sum(axis=-1)

    # Index of the most recent observed slot at or before each column.
    slot_idx = np.broadcast_to(np.arange(t), (k, t))
    seen = np.where(cm.observed, slot_idx, -1)
    last_obs = np.maximum.accumulate(seen, axis=1)
    gather = np.take_along_axis(cm.values, np.maximum(last_obs, 0), axis=1)
    in_window = (last_obs >= 0) & (slot_idx - last_obs < window)
    last = np.where(in_window, gather, 0.0)
    return last, wsum


@dataclass
class PCAModel:
    """Principal directions of the counter covariance.

    ``components`` is k x c with orthonormal columns sorted by descending
    eigenvalue; the sign convention makes each column's largest-magnitude
    entry positive so decompositions are comparable across runs.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": float(self.total_variance),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "PCAModel":
        return cls(
            mean=np.array(payload["mean"], dtype=np.float64),
            components=np.array(payload["components"], dtype=np.float64),
            eigenvalues=np.array(payload["eigenvalues"], dtype=np.float64),
            total_variance=float(payload["total_variance"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "PCAModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_pca(V: CounterMatrix, c: int) -> PCAModel:
    """Eigendecompose the k x k covariance of the counter matrix.

    Unobserved entries count as 0 (callers see per-counter missingness via
    :meth:`CounterMatrix.missingness_rate`).  Covariance uses the 1/(t-1)
    normalization over time; the top-c eigenpairs are kept.
    """
    k, t = V.values.shape
    if not 1 <= c <= k:
        raise DimensionMismatch(f"component count must be in [1, {k}], got {c}")
    if t < 2:
        raise DegenerateVariance("need at least 2 slots to estimate covariance")
    missing = V.missingness_rate()
    if missing.any():
        logger.info(
            "PCA fit with missing readings imputed as 0; worst counter missingness %.3f",
            float(missing.max()),
        )
    values = np.where(V.observed, V.values, 0.0)
    mean = values.mean(axis=1)
    centered = values - mean[:, None]
    cov = (centered @ centered.T) / (t - 1)
    total_variance = float(np.trace(cov))
    if total_variance <= 0.0:
        raise DegenerateVariance("all counters are constant over time")

    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:c]
    eigvals = np.maximum(eigvals[order], 0.0)
    components = eigvecs[:, order]
    # Sign convention: largest-magnitude entry of each component positive.
    for j in range(components.shape[1]):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    return PCAModel(
        mean=mean,
        components=components,
        eigenvalues=eigvals,
        total_variance=total_variance,
    )


def project_pca(model: PCAModel, snapshot: np.ndarray) -> np.ndarray:
    """Scores components^T (snapshot - mean); accepts (k,) or (n, k)."""
    snap = np.asarray(snapshot, dtype=np.float64)
    k = model.mean.shape[0]
    if snap.shape[-1] != k:
        raise DimensionMismatch(f"snapshot length {snap.shape[-1]} != counter count {k}")
    return (snap - model.mean) @ model.components


def explained_variance(model: PCAModel, m: int) -> float:
    """Fraction of total variance captured by the first m components."""
    if not 1 <= m <= model.n_components:
        raise DimensionMismatch(f"m must be in [1, {model.n_components}], got {m}")
    return float(model.eigenvalues[:m].sum() / model.total_variance)


@dataclass
class SpatialWeightMatrix:
    """Row-stochastic k x k relevance weights over counters, zero diagonal."""

    weights: np.ndarray
    counter_ids: np.ndarray
    method: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.counter_ids = np.asarray(self.counter_ids, dtype=np.int64)
        k = self.weights.shape[0]
        if self.weights.shape != (k, k) or self.counter_ids.shape != (k,):
            raise SchemaError("weight matrix must be square over the counter ids")
        if np.any(self.weights < 0):
            raise SchemaError("weights must be nonnegative")
        if np.any(np.abs(np.diag(self.weights)) > 0):
            raise SchemaError("self weights must be zero")
        row_sums = self.weights.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            raise SchemaError("every row must sum to 1 within 1e-9")


def build_weight_matrix(
    graph: RoadGraph, method: str = SOFTMAX_INVERSE_DISTANCE, knn_k: int = 5
) -> SpatialWeightMatrix:
    """Spatial relevance of every counter with respect to every other.

    softmax-inverse-distance: row i holds softmax over j != i of
    1/max(d_ij, 1e-6).  knn-uniform: 1/knn_k on the knn_k nearest
    neighbours (distance ties by lower id), 0 elsewhere.
    """
    ids, pos = graph.counter_arrays()
    k = len(ids)
    if k < 2:
        raise TooFewCounters(f"need at least 2 counters, got {k}")
    if method not in WEIGHTING_METHODS:
        raise InvalidK(f"unknown weighting method {method!r}")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    weights = np.zeros((k, k), dtype=np.float64)
    if method == SOFTMAX_INVERSE_DISTANCE:
        scores = 1.0 / np.maximum(dist, DISTANCE_EPS)
        np.fill_diagonal(scores, -np.inf)
        # Stable softmax per row over the off-diagonal entries.
        row_max = scores.max(axis=1, keepdims=True)
        expo = np.exp(scores - row_max)
        expo[~np.isfinite(scores)] = 0.0
        weights = expo / expo.sum(axis=1, keepdims=True)
    else:
        if not 1 <= knn_k < k:
            raise InvalidK(f"knn_k must be in [1, {k - 1}], got {knn_k}")
        for i in range(k):
            others = np.delete(np.arange(k), i)
            order = others[np.lexsort((ids[others], dist[i, others]))]
            weights[i, order[:knn_k]] = 1.0 / knn_k
    return SpatialWeightMatrix(weights=weights, counter_ids=ids, method=method)


@dataclass
class ContextMatrix:
    """t x k spatially weighted volumes: row t gives the context around
    each counter at slot t."""

    values: np.ndarray


def spatial_context(V: CounterMatrix, B: SpatialWeightMatrix) -> ContextMatrix:
    """Weighted neighbourhood volume w[t, i] = sum_j v[j, t] * b[i, j]."""
    if V.n_counters != B.weights.shape[0]:
        raise DimensionMismatch(
            f"volume matrix has {V.n_counters} counters, weights have {B.weights.shape[0]}"
        )
    if not np.array_equal(V.counter_ids, B.counter_ids):
        raise DimensionMismatch("counter id ordering differs between V and B")
    vals = np.where(V.observed, V.values, 0.0)
    return ContextMatrix(values=vals.T @ B.weights.T)


def context_of_matrix(values: np.ndarray, B: SpatialWeightMatrix) -> np.ndarray:
    """Same product as :func:`spatial_context` for a bare k x t array."""
    if values.shape[0] != B.weights.shape[0]:
        raise DimensionMismatch("row count does not match the weight matrix")
    return values.T @ B.weights.T
