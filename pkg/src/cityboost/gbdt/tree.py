"""Leaf-wise (best-first) tree growth over histogram-binned features.

A tree is grown by repeatedly splitting the frontier leaf with the
largest achievable gain until the leaf budget is exhausted or no leaf has
a positive-gain split that keeps both children above min_data_in_leaf.
Gain is the usual second-order criterion

    G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)

and leaf values are -G / (H + lambda).  Ties are broken toward the lower
feature index and lower bin, and the frontier is ordered by (gain,
insertion order), so growth is fully deterministic.

Histograms are accumulated per feature in ascending feature order with
plain bincounts; there is no parallel reduction, so summation order never
varies between runs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError
from .binning import BinnedDataset

# Gains below this are treated as zero; protects against splitting on
# floating-point dust.
MIN_GAIN = 1e-12


@dataclass
class Tree:
    """Flat node arrays; child pointers >= 0 are internal node indices,
    negative pointers encode leaf id -(pointer)-1."""

    feature: np.ndarray
    split_bin: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    leaf_value: np.ndarray
    leaf_count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_value)

    @property
    def n_internal(self) -> int:
        return len(self.feature)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        """Route raw feature rows to leaf values; NaN goes left."""
        n = X.shape[0]
        if self.n_internal == 0:
            return np.full(n, self.leaf_value[0], dtype=np.float64)
        node = np.zeros(n, dtype=np.int64)
        while True:
            pending = node >= 0
            if not pending.any():
                break
            idx = node[pending]
            x = X[pending, self.feature[idx]]
            go_left = (x <= self.threshold[idx]) | np.isnan(x)
            node[pending] = np.where(go_left, self.left[idx], self.right[idx])
        return self.leaf_value[-node - 1]

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "split_bin": self.split_bin.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "gain": self.gain.tolist(),
            "leaf_value": self.leaf_value.tolist(),
            "leaf_count": self.leaf_count.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Tree":
        return cls(
            feature=np.array(payload["feature"], dtype=np.int64),
            split_bin=np.array(payload["split_bin"], dtype=np.int64),
            threshold=np.array(payload["threshold"], dtype=np.float64),
            left=np.array(payload["left"], dtype=np.int64),
            right=np.array(payload["right"], dtype=np.int64),
            gain=np.array(payload["gain"], dtype=np.float64),
            leaf_value=np.array(payload["leaf_value"], dtype=np.float64),
            leaf_count=np.array(payload["leaf_count"], dtype=np.int64),
        )


class _LeafItem:
    """A frontier leaf: its rows, gradient sums, parent slot, and the best
    split found for it (if any)."""

    __slots__ = ("rows", "g_sum", "h_sum", "parent", "side", "split")

    def __init__(self, rows, g_sum, h_sum, parent, side):
        self.rows = rows
        self.g_sum = g_sum
        self.h_sum = h_sum
        self.parent = parent
        self.side = side
        self.split = None  # (gain, feature, bin)


def _best_split(binned, rows, g, h, g_sum, h_sum, lam, min_data, features):
    """Scan candidate splits of one leaf; returns (gain, feature, bin) or None."""
    g_rows = g[rows]
    h_rows = h[rows]
    total_count = len(rows)
    denom = h_sum + lam
    parent_score = (g_sum * g_sum / denom) if denom > 0 else 0.0

    best = None
    best_gain = MIN_GAIN
    for f in features:
        nb = int(binned.n_bins[f])
        if nb < 2:
            continue
        code = binned.codes[f, rows]
        cnt = np.bincount(code, minlength=nb)
        gh = np.bincount(code, weights=g_rows, minlength=nb)
        hh = np.bincount(code, weights=h_rows, minlength=nb)
        mb = int(binned.missing_bin[f])
        if mb >= 0:
            base_c, base_g, base_h = int(cnt[mb]), gh[mb], hh[mb]
            cnt, gh, hh = cnt[:mb], gh[:mb], hh[:mb]
        else:
            base_c, base_g, base_h = 0, 0.0, 0.0
        if len(cnt) < 2:
            continue
        count_left = base_c + np.cumsum(cnt)[:-1]
        g_left = base_g + np.cumsum(gh)[:-1]
        h_left = base_h + np.cumsum(hh)[:-1]
        count_right = total_count - count_left
        g_right = g_sum - g_left
        h_right = h_sum - h_left
        valid = (
            (count_left >= min_data)
            & (count_right >= min_data)
            & (h_left + lam > 0)
            & (h_right + lam > 0)
        )
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = (
                g_left**2 / (h_left + lam)
                + g_right**2 / (h_right + lam)
                - parent_score
            )
        gains = np.where(valid, gains, -np.inf)
        b = int(np.argmax(gains))
        if gains[b] > best_gain:
            best_gain = float(gains[b])
            best = (best_gain, f, b)
    return best


def grow_tree_with_assignment(
    binned: BinnedDataset,
    g: np.ndarray,
    h: np.ndarray,
    params,
    root_rows: np.ndarray | None = None,
    features: list[int] | None = None,
) -> tuple[Tree, np.ndarray]:
    """Grow one tree; also return the leaf index of every grown row.

    ``root_rows`` restricts growth to a row subset (bagging); rows outside
    it keep leaf index -1.  ``features`` restricts the candidate features
    (must be ascending for the documented tie-break).
    """
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if g.shape != (binned.n_rows,) or h.shape != (binned.n_rows,):
        raise SchemaError("gradient/hessian arrays must have one entry per row")
    if features is None:
        features = list(range(binned.n_features))
    lam = params.lambda_l2
    min_data = params.min_data_in_leaf

    feat_list: list[int] = []
    bin_list: list[int] = []
    thr_list: list[float] = []
    left_list: list[int] = []
    right_list: list[int] = []
    gain_list: list[float] = []
    leaf_value: list[float] = []
    leaf_count: list[int] = []
    leaf_of_row = np.full(binned.n_rows, -1, dtype=np.int64)

    def set_child(parent, side, code):
        if parent is None:
            return
        if side == 0:
            left_list[parent] = code
        else:
            right_list[parent] = code

    def finalize(item: _LeafItem) -> None:
        leaf_id = len(leaf_value)
        denom = item.h_sum + lam
        leaf_value.append(float(-item.g_sum / denom) if denom > 0 else 0.0)
        leaf_count.append(len(item.rows))
        leaf_of_row[item.rows] = leaf_id
        set_child(item.parent, item.side, -(leaf_id + 1))

    rows = np.arange(binned.n_rows) if root_rows is None else np.asarray(root_rows)
    root = _LeafItem(rows, float(g[rows].sum()), float(h[rows].sum()), None, 0)
    root.split = _best_split(binned, rows, g, h, root.g_sum, root.h_sum, lam, min_data, features)

    heap: list[tuple[float, int, _LeafItem]] = []
    seq = 0
    if root.split is not None and params.num_leaves >= 2:
        heapq.heappush(heap, (-root.split[0], seq, root))
        seq += 1
    else:
        finalize(root)

    n_leaves = 1
    while heap and n_leaves < params.num_leaves:
        _, _, item = heapq.heappop(heap)
        gain, f, b = item.split
        node_id = len(feat_list)
        feat_list.append(f)
        bin_list.append(b)
        thr_list.append(float(binned.thresholds[f][b]))
        left_list.append(0)
        right_list.append(0)
        gain_list.append(gain)
        set_child(item.parent, item.side, node_id)

        code = binned.codes[f, item.rows]
        go_left = code <= b
        mb = int(binned.missing_bin[f])
        if mb >= 0:
            go_left |= code == mb
        for side, child_rows in ((0, item.rows[go_left]), (1, item.rows[~go_left])):
            child = _LeafItem(
                child_rows,
                float(g[child_rows].sum()),
                float(h[child_rows].sum()),
                node_id,
                side,
            )
            child.split = _best_split(
                binned, child_rows, g, h, child.g_sum, child.h_sum, lam, min_data, features
            )
            if child.split is not None:
                heapq.heappush(heap, (-child.split[0], seq, child))
                seq += 1
            else:
                finalize(child)
        n_leaves += 1

    while heap:
        _, _, item = heapq.heappop(heap)
        finalize(item)

    tree = Tree(
        feature=np.array(feat_list, dtype=np.int64),
        split_bin=np.array(bin_list, dtype=np.int64),
        threshold=np.array(thr_list, dtype=np.float64),
        left=np.array(left_list, dtype=np.int64),
        right=np.array(right_list, dtype=np.int64),
        gain=np.array(gain_list, dtype=np.float64),
        leaf_value=np.array(leaf_value, dtype=np.float64),
        leaf_count=np.array(leaf_count, dtype=np.int64),
    )
    return tree, leaf_of_row


def grow_tree(binned: BinnedDataset, g: np.ndarray, h: np.ndarray, params) -> Tree:
    """Grow one regression tree on the full row set."""
    tree, _ = grow_tree_with_assignment(binned, g, h, params)
    return tree
