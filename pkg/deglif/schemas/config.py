"""
Pydantic schemas for experiment configuration.

This module defines the validated configuration objects consumed by the
services: synthetic graph specs, noise specs, GCN hyperparameters,
detector settings, solver settings and the top-level experiment document.
"""

import json
import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from deglif.core.config import HvpBackend, get_settings


# Hyperparameter grids the detectors are tuned over
LAMBDA_GRID: List[float] = [0.5, 0.52, 0.53, 0.55, 0.56, 0.6]
MU_GRID: List[float] = [0.0, 0.1, 1.0, 10.0, 20.0]


# ============================================================================
# Enumerations
# ============================================================================


class NoiseModel(str, Enum):
    """Label noise model."""
    SLN = "sln"
    PAIRWISE = "pairwise"


class DetectionMethod(str, Enum):
    """Noisy-node detector."""
    MV = "mv"
    SUM = "sum"


class RelabelMode(str, Enum):
    """How a relabelled node enters retraining."""
    HARD = "hard"
    PHI = "phi"


# ============================================================================
# Graph generation
# ============================================================================


class SplitFractions(BaseModel):
    """Role split fractions for a generated graph."""
    model_config = ConfigDict(frozen=True)

    train: float = Field(default=0.4, gt=0, le=1)
    validation: float = Field(default=0.3, ge=0, le=1)
    test: float = Field(default=0.3, ge=0, le=1)

    @model_validator(mode="after")
    def _fractions_fit(self) -> "SplitFractions":
        if self.train + self.validation + self.test > 1.0 + 1e-12:
            raise ValueError("split fractions must sum to at most 1")
        return self


class SbmSpec(BaseModel):
    """Stochastic block model specification."""
    model_config = ConfigDict(frozen=True)

    n_per_class: int = Field(ge=1)
    n_classes: int = Field(ge=2)
    p_in: float = Field(gt=0, le=1)
    p_out: float = Field(ge=0, lt=1)
    feature_dim: int = Field(ge=2)
    feature_noise_sigma: float = Field(default=0.5, ge=0)
    split: SplitFractions = Field(default_factory=SplitFractions)
    clean_size: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_regime(self) -> "SbmSpec":
        if self.p_in <= self.p_out:
            raise ValueError("p_in must exceed p_out")
        if self.feature_dim < self.n_classes:
            raise ValueError("feature_dim must be >= n_classes")
        return self

    @property
    def n_nodes(self) -> int:
        return self.n_per_class * self.n_classes


# ============================================================================
# Noise
# ============================================================================


class NoiseOptions(BaseModel):
    """Noise model and level as written in an experiment file."""
    model: NoiseModel = NoiseModel.SLN
    level: float = Field(default=0.0, ge=0, lt=1)


class NoiseSpec(NoiseOptions):
    """Noise options bound to a class count."""
    model_config = ConfigDict(frozen=True)

    n_classes: int = Field(ge=2)

    @model_validator(mode="after")
    def _check_level(self) -> "NoiseSpec":
        if self.model == NoiseModel.SLN and self.level / (self.n_classes - 1) > 1:
            raise ValueError("SLN requires level/(K-1) <= 1")
        return self


# ============================================================================
# Model
# ============================================================================


class ModelOptions(BaseModel):
    """Graph-independent GCN hyperparameters."""
    hidden_dim: int = Field(default=16, ge=1)
    l2_reg: float = Field(default=5e-4, gt=0)
    learning_rate: float = Field(default=0.5, gt=0)
    epochs: int = Field(default=400, ge=0)
    # Stop once ‖∇R(θ)‖ ≤ grad_tol; 0 runs every epoch.
    grad_tol: float = Field(default=0.0, ge=0)


class GcnConfig(ModelOptions):
    """Full GCN configuration: shapes plus training schedule."""
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(ge=1)
    n_classes: int = Field(ge=2)
    init_seed: int = 0

    @classmethod
    def from_options(
        cls, options: ModelOptions, input_dim: int, n_classes: int, init_seed: int
    ) -> "GcnConfig":
        """Bind hyperparameters to a graph's shapes and an init seed."""
        return cls(
            input_dim=input_dim,
            n_classes=n_classes,
            init_seed=init_seed,
            **options.model_dump(),
        )

    def with_seed(self, init_seed: int) -> "GcnConfig":
        return self.model_copy(update={"init_seed": init_seed})

    @property
    def n_params(self) -> int:
        d, h, k = self.input_dim, self.hidden_dim, self.n_classes
        return d * h + h + h * k + k


# ============================================================================
# Detector and solver
# ============================================================================


class DenoiseConfig(BaseModel):
    """Detector choice, its threshold and the successive-application count."""
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    method: DetectionMethod = DetectionMethod.SUM
    threshold: float = 0.0
    counts: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_threshold(self) -> "DenoiseConfig":
        if self.method == DetectionMethod.MV and not 0.5 <= self.threshold < 1.0:
            raise ValueError("lambda must lie in [0.5, 1)")
        if math.isnan(self.threshold):
            raise ValueError("threshold must not be NaN")
        return self

    def with_threshold(self, threshold: float) -> "DenoiseConfig":
        return DenoiseConfig(method=self.method, threshold=threshold, counts=self.counts)


class SolverConfig(BaseModel):
    """Inverse-HVP solver settings; defaults come from the process settings."""
    model_config = ConfigDict(frozen=True)

    damping: float = Field(default_factory=lambda: get_settings().damping, ge=0)
    # A table with failed solves is rebuilt at damping·growth, up to max_damping.
    max_damping: float = Field(default_factory=lambda: get_settings().max_damping, ge=0)
    damping_growth: float = Field(default_factory=lambda: get_settings().damping_growth, gt=1)
    tol: float = Field(default_factory=lambda: get_settings().cg_tol, gt=0)
    max_iters: int = Field(default_factory=lambda: get_settings().cg_max_iters, ge=1)
    backend: HvpBackend = Field(default_factory=lambda: get_settings().hvp_backend)


# ============================================================================
# Experiment document
# ============================================================================


class ExperimentConfig(BaseModel):
    """Top-level experiment configuration (one JSON file per experiment)."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    dataset_path: Optional[str] = None
    sbm: Optional[SbmSpec] = None
    graph_seed: int = 0
    noise: Optional[NoiseOptions] = None
    model1: ModelOptions = Field(default_factory=ModelOptions)
    model2: ModelOptions = Field(default_factory=ModelOptions)
    denoise: DenoiseConfig = Field(default_factory=DenoiseConfig)
    grid: Optional[List[float]] = None
    clean_sizes: Optional[List[int]] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        if (self.dataset_path is None) == (self.sbm is None):
            raise ValueError("exactly one of dataset_path or sbm is required")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.grid is not None and not self.grid:
            raise ValueError("grid must be non-empty when given")
        if self.grid is not None and self.denoise.method == DetectionMethod.MV:
            bad = [value for value in self.grid if not 0.5 <= value < 1.0]
            if bad:
                raise ValueError(f"lambda grid values outside [0.5, 1): {bad}")
        return self

    def semantic_payload(self) -> Dict[str, Any]:
        """Fields that determine results (the output location does not)."""
        return json.loads(self.model_dump_json(exclude={"output_dir"}))
