"""Schemas module initialization."""

from deglif.schemas.config import (
    LAMBDA_GRID,
    MU_GRID,
    DenoiseConfig,
    DetectionMethod,
    ExperimentConfig,
    GcnConfig,
    ModelOptions,
    NoiseModel,
    NoiseOptions,
    NoiseSpec,
    RelabelMode,
    SbmSpec,
    SolverConfig,
    SplitFractions,
)
from deglif.schemas.reports import (
    AgreementReport,
    CleanSizeRow,
    CountRecord,
    DenoiseMetrics,
    DenoiseReport,
    RelabelRecord,
    RunManifest,
    SuccessiveSeries,
    SweepResult,
    SweepRow,
    SweepSummaryRow,
)

__all__ = [
    # Config
    "LAMBDA_GRID",
    "MU_GRID",
    "DenoiseConfig",
    "DetectionMethod",
    "ExperimentConfig",
    "GcnConfig",
    "ModelOptions",
    "NoiseModel",
    "NoiseOptions",
    "NoiseSpec",
    "RelabelMode",
    "SbmSpec",
    "SolverConfig",
    "SplitFractions",
    # Reports
    "AgreementReport",
    "CleanSizeRow",
    "CountRecord",
    "DenoiseMetrics",
    "DenoiseReport",
    "RelabelRecord",
    "RunManifest",
    "SuccessiveSeries",
    "SweepResult",
    "SweepRow",
    "SweepSummaryRow",
]
