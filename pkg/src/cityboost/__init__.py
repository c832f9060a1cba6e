"""cityboost: counter-driven city traffic forecasting.

City-wide PCA traffic context and regime-conditional target encodings
feed a from-scratch histogram gradient-boosted tree trainer with per-row
init scores, for edge congestion classification and supersegment travel
time regression.
"""

__version__ = "0.1.0"

from . import counterfeat, encodings, errors, gbdt, metrics, pipeline, roadgraph, syncity, tables

__all__ = [
    "__version__",
    "counterfeat",
    "encodings",
    "errors",
    "gbdt",
    "metrics",
    "pipeline",
    "roadgraph",
    "syncity",
    "tables",
]
