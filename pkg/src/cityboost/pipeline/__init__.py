"""Dataset assembly, splitting, metrics, ablation, and tuning."""

from ..metrics import eval_core, eval_extended
from ..tables import FeatureTable
from .ablation import ARM_FLAGS, AblationResult, ablate, arm_tables, objective_for
from .assembly import (
    CORE,
    CORE_ENCODING_COLUMNS,
    EXTENDED,
    EXTENDED_ENCODING_COLUMNS,
    ArtifactBundle,
    PipelineConfig,
    assemble,
    assemble_core,
    assemble_extended,
    fit_artifacts,
    pca_scatter,
)
from .split import SplitSpec, interleaved_split
from .tuning import stepwise_tune
from .worlddata import WorldData, load_world

__all__ = [
    "eval_core",
    "eval_extended",
    "FeatureTable",
    "ARM_FLAGS",
    "AblationResult",
    "ablate",
    "arm_tables",
    "objective_for",
    "CORE",
    "EXTENDED",
    "CORE_ENCODING_COLUMNS",
    "EXTENDED_ENCODING_COLUMNS",
    "ArtifactBundle",
    "PipelineConfig",
    "assemble",
    "assemble_core",
    "assemble_extended",
    "fit_artifacts",
    "pca_scatter",
    "SplitSpec",
    "interleaved_split",
    "stepwise_tune",
    "WorldData",
    "load_world",
]
