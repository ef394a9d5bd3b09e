"""
Pydantic schemas for emitted reports.

These are the JSON documents written by the pipeline, the oracle and the
CLI: denoising reports, agreement reports and run manifests.
"""

from datetime import datetime, timezone
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from deglif.schemas.config import DetectionMethod


class RelabelRecord(BaseModel):
    """One relabel decision as serialized in a report."""
    node: int
    old: int
    new: int
    phi: Optional[float] = None


class DenoiseMetrics(BaseModel):
    """Quality metrics of one denoising pass."""
    precision: Optional[float] = None
    recall: Optional[float] = None
    relabel_accuracy: Optional[float] = None
    noise_frac_before: Optional[float] = None
    noise_frac_after: Optional[float] = None
    model1_test_acc: Optional[float] = None
    model2_test_acc: Optional[float] = None
    model2_val_acc: Optional[float] = None


class DenoiseReport(BaseModel):
    """Result of one pipeline run."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    method: DetectionMethod
    threshold: float
    seed: Optional[int] = None
    d_n: List[int] = Field(default_factory=list)
    relabels: List[RelabelRecord] = Field(default_factory=list)
    metrics: DenoiseMetrics = Field(default_factory=DenoiseMetrics)
    clean_risk_surrogate: float = 0.0
    n_solves: int = 0


class AgreementReport(BaseModel):
    """Agreement between influence predictions and retraining deltas."""
    sign_agreement: float = Field(ge=0.0, le=1.0)
    spearman: Optional[float] = Field(default=None, ge=-1.0, le=1.0)
    n_nodes: int = Field(ge=0)


class RunManifest(BaseModel):
    """Provenance record written next to every run's artifacts."""
    config_hash: str
    seed: Optional[int] = None
    stage_seconds: Dict[str, float] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    library_version: str
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


# ============================================================================
# Experiment tables
# ============================================================================


class CountRecord(BaseModel):
    """Noise fraction, detection quality and Model-2 accuracy after one successive count."""
    count: int = Field(ge=1)
    noise_fraction: Optional[float] = None
    test_acc: Optional[float] = None
    n_flagged: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None


class SuccessiveSeries(BaseModel):
    """Initial noise fraction plus one record per count."""
    seed: Optional[int] = None
    initial_noise_fraction: Optional[float] = None
    records: List[CountRecord] = Field(default_factory=list)


class SweepRow(BaseModel):
    """One (threshold, seed) cell of a hyperparameter sweep."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    threshold: float
    seed: Optional[int] = None
    n_flagged: int
    model2_test_acc: Optional[float] = None
    model2_val_acc: Optional[float] = None
    noise_frac_after: Optional[float] = None


class SweepSummaryRow(BaseModel):
    """Per-threshold aggregate over seeds (population std)."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    threshold: float
    n_seeds: int
    test_acc_mean: Optional[float] = None
    test_acc_std: Optional[float] = None
    val_acc_mean: Optional[float] = None


class SweepResult(BaseModel):
    """Sweep cells, per-threshold summary and the validation-selected threshold."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    method: DetectionMethod
    rows: List[SweepRow] = Field(default_factory=list)
    summary: List[SweepSummaryRow] = Field(default_factory=list)
    selected_threshold: Optional[float] = None


class CleanSizeRow(BaseModel):
    """Model-2 accuracy for one clean-set size and seed."""
    clean_size: int = Field(ge=1)
    seed: Optional[int] = None
    n_flagged: int
    model2_test_acc: Optional[float] = None
    noise_frac_after: Optional[float] = None
