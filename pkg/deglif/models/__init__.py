"""Models module initialization."""

from deglif.models.domain import (
    CorruptionLedger,
    ForwardCache,
    Graph,
    InfluenceTable,
    NoisyInstance,
    NoisySet,
    NormalizedAdjacency,
    Perturbation,
    PerturbationKind,
    PipelineResult,
    RelabelDecision,
    RetrainDelta,
    RiskBreakdown,
    RoleMasks,
    SolveReport,
    TransitionMatrix,
    as_index_array,
)

__all__ = [
    "CorruptionLedger",
    "ForwardCache",
    "Graph",
    "InfluenceTable",
    "NoisyInstance",
    "NoisySet",
    "NormalizedAdjacency",
    "Perturbation",
    "PerturbationKind",
    "PipelineResult",
    "RelabelDecision",
    "RetrainDelta",
    "RiskBreakdown",
    "RoleMasks",
    "SolveReport",
    "TransitionMatrix",
    "as_index_array",
]
