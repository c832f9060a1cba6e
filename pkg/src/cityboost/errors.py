"""Exception hierarchy shared across the toolkit.

Every error carries a ``category`` used by the CLI to map failures onto
exit codes and one-line machine-parsable reports (``category/ClassName``).
"""

from __future__ import annotations


class CityBoostError(Exception):
    """Base class for all toolkit errors."""

    category = "InternalError"

    def report(self) -> str:
        return f"{self.category}/{type(self).__name__}: {self}"


class DataError(CityBoostError):
    """Invalid, inconsistent, or missing input data."""

    category = "DataError"


class UsageError(CityBoostError):
    """The caller asked for something the toolkit cannot do."""

    category = "UsageError"


# roadgraph
class MissingFile(DataError):
    pass


class SchemaError(DataError):
    pass


class DanglingReference(DataError):
    pass


class DegenerateSupersegment(DataError):
    pass


class NoCounters(DataError):
    pass


# syncity
class InvalidConfig(UsageError):
    pass


# counterfeat
class DegenerateVariance(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class TooFewCounters(DataError):
    pass


class InvalidK(UsageError):
    pass


# encodings
class DegenerateVolume(DataError):
    pass


class EmptyLabels(DataError):
    pass


class UnknownRegime(DataError):
    pass


# gbdt
class SchemaMismatch(DataError):
    pass


class EmptyData(DataError):
    pass


# pipeline
class MissingArtifact(DataError):
    pass


class SlotOutOfRange(DataError):
    pass


class TooFewWeeks(DataError):
    pass
