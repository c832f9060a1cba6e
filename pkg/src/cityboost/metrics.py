"""Evaluation metrics for both prediction tasks.

Weighted cross entropy normalizes by the total weight of the evaluated
rows, so with equal class weights it reduces to the plain mean cross
entropy.  Probabilities are clamped at 1e-15 before the log.
"""

from __future__ import annotations

import numpy as np

from .errors import SchemaError

PROB_FLOOR = 1e-15


def eval_core(proba: np.ndarray, labels: np.ndarray, weights) -> float:
    """Class-weighted cross entropy over 3-class probability rows."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if proba.ndim != 2 or proba.shape[1] != 3:
        raise SchemaError(f"expected (n, 3) probabilities, got {proba.shape}")
    if proba.shape[0] != labels.shape[0]:
        raise SchemaError("probability and label row counts differ")
    if weights.shape != (3,) or np.any(weights <= 0):
        raise SchemaError("need 3 positive class weights")
    w = weights[labels]
    p = np.maximum(proba[np.arange(len(labels)), labels], PROB_FLOOR)
    return float(-(w * np.log(p)).sum() / w.sum())


def eval_core_from_scores(scores: np.ndarray, labels: np.ndarray, weights) -> float:
    """Same metric straight from raw scores via a stable log-softmax."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(len(labels)), labels] - log_norm
    w = weights[labels]
    return float(-(w * log_p).sum() / w.sum())


def softmax(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def eval_extended(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean absolute error."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise SchemaError("prediction and label shapes differ")
    return float(np.abs(preds - labels).mean())
