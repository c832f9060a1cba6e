"""Training objectives: gradients, hessians, and their configuration.

The classification loss is class-weighted softmax cross entropy with the
standard diagonal hessian surrogate w * p * (1 - p).  The regression loss
is absolute error handled as a sign gradient with a unit hessian; the
exact per-leaf L1 optimum is restored by median leaf renewal in the
training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError

WEIGHTED_SOFTMAX_CE = "weighted-softmax-ce"
MAE = "mae"


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str
    class_weights: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in (WEIGHTED_SOFTMAX_CE, MAE):
            raise SchemaError(f"unknown objective {self.kind!r}")
        if self.kind == WEIGHTED_SOFTMAX_CE:
            if self.class_weights is None:
                raise SchemaError("weighted softmax cross entropy needs class weights")
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.shape != (3,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise SchemaError("class weights must be 3 finite positive reals")
            if not (w[2] >= w[1] >= w[0]):
                raise SchemaError(
                    "class weights must satisfy red >= yellow >= green "
                    f"(w[2] >= w[1] >= w[0]), got {tuple(w)}"
                )

    @property
    def n_outputs(self) -> int:
        return 3 if self.kind == WEIGHTED_SOFTMAX_CE else 1

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "class_weights": None if self.class_weights is None else list(self.class_weights),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ObjectiveConfig":
        cw = payload.get("class_weights")
        return cls(kind=payload["kind"], class_weights=None if cw is None else tuple(cw))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def grad_hess_wce(logits, label: int, weights) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and hessian of w_label * (-log softmax(logits)[label]).

    g_c = w * (p_c - 1[c = label]);  h_c = w * p_c * (1 - p_c).
    """
    logits = np.asarray(logits, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    p = _softmax(logits)
    w = weights[label]
    g = w * p
    g[label] -= w
    h = w * p * (1.0 - p)
    return g, h


def grad_hess_wce_batch(
    scores: np.ndarray, labels: np.ndarray, weights
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized grad_hess_wce over (n, 3) score rows."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    p = _softmax(scores)
    w = weights[labels][:, None]
    g = w * p
    g[np.arange(len(labels)), labels] -= w[:, 0]
    h = w * p * (1.0 - p)
    return g, h


def grad_hess_mae(pred: float, label: float) -> tuple[float, float]:
    """Sign gradient of |pred - label| with a constant unit hessian."""
    diff = pred - label
    return (0.0 if diff == 0 else float(np.sign(diff))), 1.0


def grad_hess_mae_batch(preds: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return np.sign(preds - labels), np.ones_like(preds)
