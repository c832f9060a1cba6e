"""Interleaved week-based train/validation splitting."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import SchemaError, TooFewWeeks


@dataclass(frozen=True)
class SplitSpec:
    train_weeks: tuple[int, ...]
    valid_weeks: tuple[int, ...]

    def __post_init__(self):
        if set(self.train_weeks) & set(self.valid_weeks):
            raise SchemaError("train and validation weeks overlap")


def interleaved_split(available_weeks) -> SplitSpec:
    """Every fourth week (positions 1, 5, 9, ... in sorted order) validates.

    Interleaving keeps the validation weeks spread across the seasons the
    way held-out test periods are, instead of chopping off a contiguous
    tail.
    """
    weeks = sorted(set(int(w) for w in available_weeks))
    if len(weeks) < 5:
        raise TooFewWeeks(f"need at least 5 weeks to interleave, got {len(weeks)}")
    valid = tuple(w for i, w in enumerate(weeks) if i % 4 == 1)
    train = tuple(w for i, w in enumerate(weeks) if i % 4 != 1)
    return SplitSpec(train_weeks=train, valid_weeks=valid)
