"""Stepwise (coordinate-descent) hyperparameter tuning.

Parameters are swept in the given order; each one is fixed at its best
validation metric before the next is touched.  Every candidate costs one
training run, ties keep the earlier candidate, and including the current
default as the first candidate guarantees the tuned result is never
worse than the default on the tuning split.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

from ..errors import SchemaError
from ..gbdt import TrainParams

TuneTrace = list[tuple[str, object, float]]


def stepwise_tune(
    train_fn: Callable[[TrainParams], float],
    base_params: TrainParams,
    param_space: list[tuple[str, list]],
    budget: int | None = None,
) -> tuple[TrainParams, TuneTrace]:
    """Sweep ``param_space`` in order, minimizing ``train_fn``.

    ``train_fn`` maps params to a validation metric (lower is better).
    ``budget`` caps the total number of training runs; a sweep stops
    mid-parameter when it is exhausted.
    """
    for name, candidates in param_space:
        if not candidates:
            raise SchemaError(f"parameter {name!r} has no candidates")
    current = base_params
    trace: TuneTrace = []
    runs = 0
    for name, candidates in param_space:
        best_metric = None
        best_value = None
        for value in candidates:
            if budget is not None and runs >= budget:
                break
            metric = float(train_fn(replace(current, **{name: value})))
            trace.append((name, value, metric))
            runs += 1
            if best_metric is None or metric < best_metric:
                best_metric, best_value = metric, value
        if best_value is not None:
            current = replace(current, **{name: best_value})
    return current, trace
