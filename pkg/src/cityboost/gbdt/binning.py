"""Quantile binning of feature columns for histogram-based training.

Each feature is discretized into at most ``max_bins`` bins with
thresholds at feature quantiles (exact midpoints when the distinct-value
count fits the budget).  A bin index b means value <= thresholds[b] and
value > thresholds[b-1].  Missing values (NaN) get a dedicated trailing
bin which is routed like the smallest bin wherever the feature is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError
from ..tables import FeatureTable


@dataclass
class BinnedDataset:
    """Per-feature bin codes, thresholds, and missing-bin indices.

    ``codes`` is (n_features, n_rows) so one feature's codes are
    contiguous.  ``missing_bin[f]`` is -1 when feature f has no missing
    values, otherwise the trailing bin index reserved for them.
    ``n_bins[f]`` counts all bins including a missing bin if present.
    """

    codes: np.ndarray
    thresholds: list[np.ndarray]
    n_bins: np.ndarray
    missing_bin: np.ndarray
    feature_names: list[str]

    @property
    def n_rows(self) -> int:
        return self.codes.shape[1]

    @property
    def n_features(self) -> int:
        return self.codes.shape[0]


def _feature_thresholds(x: np.ndarray, max_bins: int) -> np.ndarray:
    finite = x[np.isfinite(x)]
    if finite.size == 0:
        return np.empty(0, dtype=np.float64)
    distinct = np.unique(finite)
    if len(distinct) <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    qs = np.arange(1, max_bins) / max_bins
    thresholds = np.unique(np.quantile(finite, qs, method="linear"))
    # A threshold at the max would leave the last bin empty.
    return thresholds[thresholds < distinct[-1]]


def bin_features(table: FeatureTable, max_bins: int = 255) -> BinnedDataset:
    """Discretize every feature column of the table."""
    if max_bins < 2:
        raise SchemaError(f"max_bins must be >= 2, got {max_bins}")
    n_rows, n_features = table.X.shape
    codes = np.zeros((n_features, n_rows), dtype=np.uint16)
    thresholds = []
    n_bins = np.zeros(n_features, dtype=np.int64)
    missing_bin = np.full(n_features, -1, dtype=np.int64)
    for f in range(n_features):
        x = table.X[:, f]
        thr = _feature_thresholds(x, max_bins)
        thresholds.append(thr)
        finite_bins = len(thr) + 1
        code = np.searchsorted(thr, x, side="left").astype(np.uint16)
        nan_mask = ~np.isfinite(x)
        if nan_mask.any():
            missing_bin[f] = finite_bins
            code[nan_mask] = finite_bins
            n_bins[f] = finite_bins + 1
        else:
            n_bins[f] = finite_bins
        codes[f] = code
    return BinnedDataset(
        codes=codes,
        thresholds=thresholds,
        n_bins=n_bins,
        missing_bin=missing_bin,
        feature_names=list(table.feature_names),
    )
