"""
Denoise service: noisy-node detection, relabelling and the full pipeline.

This module provides:
- DeGLIF(mv) and DeGLIF(sum) detectors over an influence table
- The runner-up relabelling function with its φ diagnostic
- The pipeline: Model-1 → influence table → detect → relabel → Model-2
- Successive application, threshold sweeps and the clean-set size study
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from deglif.core.errors import NumericalError, ValidationError
from deglif.models import (
    CorruptionLedger,
    Graph,
    InfluenceTable,
    NoisyInstance,
    NoisySet,
    PipelineResult,
    RelabelDecision,
)
from deglif.schemas.config import (
    DenoiseConfig,
    DetectionMethod,
    GcnConfig,
    ModelOptions,
    SolverConfig,
)
from deglif.schemas.reports import (
    CleanSizeRow,
    CountRecord,
    DenoiseMetrics,
    DenoiseReport,
    RelabelRecord,
    SuccessiveSeries,
    SweepResult,
    SweepRow,
    SweepSummaryRow,
)
from deglif.services import gcn_service
from deglif.services.graph_service import normalize
from deglif.services.influence_service import InfluenceContext, build_context, iup_table
from deglif.services.noise_service import noise_fraction
from deglif.utils.logging import get_logger
from deglif.utils.parallel import parallel_map, resolve_workers

logger = get_logger(__name__)


# ============================================================================
# Detection
# ============================================================================


def _require_valid(table: InfluenceTable) -> None:
    if not table.valid:
        raise NumericalError("influence table is invalid: at least one solve failed")


def identify_mv(table: InfluenceTable, lam: float) -> NoisySet:
    """
    Flag z when at least λ·|D_c| clean nodes have I_up(-z, v) < 0.

    Zero entries do not count as negative.
    """
    _require_valid(table)
    if not 0.5 <= lam < 1.0:
        raise ValidationError("lambda must lie in [0.5, 1)")
    negatives = (table.iup < 0).sum(axis=1)
    flagged = negatives >= lam * table.clean_nodes.size
    nodes = table.train_nodes[flagged]
    return NoisySet(
        nodes=nodes,
        evidence={int(z): float(f) for z, f in zip(nodes, table.neg_fraction[flagged])},
    )


def identify_sum(table: InfluenceTable, mu: float) -> NoisySet:
    """Flag z when I_cv(-z) > μ (strict)."""
    _require_valid(table)
    flagged = table.icv > mu
    nodes = table.train_nodes[flagged]
    return NoisySet(
        nodes=nodes,
        evidence={int(z): float(s) for z, s in zip(nodes, table.icv[flagged])},
    )


def identify(table: InfluenceTable, dcfg: DenoiseConfig) -> NoisySet:
    if dcfg.method == DetectionMethod.MV:
        return identify_mv(table, dcfg.threshold)
    return identify_sum(table, dcfg.threshold)


# ============================================================================
# Relabelling
# ============================================================================


def relabel(node: int, observed: int, probs: np.ndarray) -> RelabelDecision:
    """
    Relabel to the most probable class other than the observed one.

    φ = log(1 - f_m)/log(f_{y*}) is recorded for diagnostics; it is None
    when f_{y*} is 0 or 1 or when f_m is 1.

    Args:
        node: Node index.
        observed: Observed label m.
        probs: Model-1 probability row f(z).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size < 2:
        raise ValidationError("relabelling needs at least two classes")
    masked = probs.copy()
    masked[observed] = -np.inf
    new_label = int(np.argmax(masked))

    f_m, f_new = probs[observed], probs[new_label]
    phi: Optional[float] = None
    if 0.0 < f_new < 1.0 and f_m < 1.0:
        phi = math.log1p(-f_m) / math.log(f_new)
    return RelabelDecision(
        node=int(node),
        old_label=int(observed),
        new_label=new_label,
        phi=phi,
        probs=probs,
    )


# ============================================================================
# Pipeline
# ============================================================================


@dataclass(eq=False)
class ScoredGraph:
    """Model-1 and its influence table for one noisy graph."""

    graph: Graph
    cfg: GcnConfig
    theta: np.ndarray
    context: InfluenceContext
    table: InfluenceTable

    @property
    def model1_test_acc(self) -> Optional[float]:
        predictions = np.argmax(self.context.probs, axis=1)
        return gcn_service.accuracy(predictions, self.graph.labels, self.graph.masks.test)


def bind_models(
    graph: Graph, model1: ModelOptions, model2: ModelOptions, seed: int
) -> Tuple[GcnConfig, GcnConfig]:
    """Model-1 initializes from ``seed``, Model-2 from ``seed + 1``."""
    cfg1 = GcnConfig.from_options(model1, graph.feature_dim, graph.n_classes, seed)
    cfg2 = GcnConfig.from_options(model2, graph.feature_dim, graph.n_classes, seed + 1)
    return cfg1, cfg2


def score_graph(
    graph: Graph,
    cfg1: GcnConfig,
    solver: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> ScoredGraph:
    """Train Model-1 and build the influence table on D_c."""
    if not graph.masks.clean.size:
        raise ValidationError("clean set D_c is empty")
    theta, _ = gcn_service.train(graph, cfg1)
    context = build_context(graph, theta, cfg1, solver=solver, workers=workers)
    table = iup_table(context)
    _require_valid(table)
    return ScoredGraph(graph=graph, cfg=cfg1, theta=theta, context=context, table=table)


def _detection_metrics(
    flagged: np.ndarray,
    decisions: Sequence[RelabelDecision],
    ledger: CorruptionLedger,
    labels: np.ndarray,
) -> Dict[str, Optional[float]]:
    """Score detection against the ledger nodes whose input label is still wrong."""
    truly_noisy = ledger.nodes[np.asarray(labels)[ledger.nodes] != ledger.original]
    hits = np.intersect1d(flagged, truly_noisy)
    original = ledger.original_labels()
    detected = set(hits.tolist())
    correct = [d.new_label == original[d.node] for d in decisions if d.node in detected]
    return {
        "precision": hits.size / flagged.size if flagged.size else None,
        "recall": hits.size / truly_noisy.size if truly_noisy.size else None,
        "relabel_accuracy": float(np.mean(correct)) if correct else None,
    }


def finish_pipeline(
    scored: ScoredGraph,
    cfg2: GcnConfig,
    dcfg: DenoiseConfig,
    ledger: Optional[CorruptionLedger] = None,
    seed: Optional[int] = None,
    table: Optional[InfluenceTable] = None,
) -> PipelineResult:
    """
    Detect, relabel and retrain Model-2 from a scored graph.

    Args:
        scored: Model-1 and its influence table.
        cfg2: Model-2 configuration (fresh initialization).
        dcfg: Detector and threshold.
        ledger: Ground truth for precision, recall and noise fractions.
        seed: Seed recorded in the report.
        table: Table override (a column subset of ``scored.table``).
    """
    graph = scored.graph
    table = table if table is not None else scored.table
    noisy = identify(table, dcfg)
    probs = scored.context.probs
    decisions = [relabel(int(z), int(graph.labels[z]), probs[z]) for z in noisy.nodes]

    labels = graph.labels.copy()
    for decision in decisions:
        labels[decision.node] = decision.new_label
    denoised = graph.with_labels(labels)

    n = table.n_train
    icv = dict(zip(table.train_nodes.tolist(), table.icv.tolist()))
    surrogate = sum(icv[int(z)] for z in noisy.nodes) / n
    if dcfg.method == DetectionMethod.SUM and dcfg.threshold >= 0:
        if surrogate < len(noisy) * dcfg.threshold / n:
            raise NumericalError("clean-risk surrogate fell below |D_n|·μ/n")

    theta2, _ = gcn_service.train(denoised, cfg2)
    predictions, _ = gcn_service.predict(
        normalize(denoised), denoised.features, theta2, gcn_service.ParamLayout.from_config(cfg2)
    )
    metrics = DenoiseMetrics(
        model1_test_acc=scored.model1_test_acc,
        model2_test_acc=gcn_service.accuracy(predictions, denoised.labels, denoised.masks.test),
        model2_val_acc=gcn_service.accuracy(predictions, denoised.labels, denoised.masks.validation),
    )
    if ledger is not None:
        metrics = metrics.model_copy(
            update={
                **_detection_metrics(noisy.nodes, decisions, ledger, graph.labels),
                "noise_frac_before": noise_fraction(ledger, graph.labels),
                "noise_frac_after": noise_fraction(ledger, denoised.labels),
            }
        )

    report = DenoiseReport(
        method=dcfg.method,
        threshold=dcfg.threshold,
        seed=seed,
        d_n=[int(z) for z in noisy.nodes],
        relabels=[
            RelabelRecord(node=d.node, old=d.old_label, new=d.new_label, phi=d.phi)
            for d in decisions
        ],
        metrics=metrics,
        clean_risk_surrogate=surrogate,
        n_solves=len(table.solve_reports),
    )
    logger.info(
        "Pipeline pass finished",
        seed=seed,
        method=dcfg.method.value,
        threshold=dcfg.threshold,
        n_flagged=len(noisy),
        noise_frac_after=metrics.noise_frac_after,
        model2_test_acc=metrics.model2_test_acc,
    )
    return PipelineResult(
        graph=denoised, theta=theta2, report=report, table=table, decisions=decisions
    )


def run_pipeline(
    graph: Graph,
    cfg1: GcnConfig,
    cfg2: GcnConfig,
    dcfg: DenoiseConfig,
    ledger: Optional[CorruptionLedger] = None,
    solver: Optional[SolverConfig] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> PipelineResult:
    """
    Train Model-1, score, detect, relabel and train Model-2 on D*.

    Only training-mask labels change. An empty D_n is legal: D* = D and
    Model-2 still trains.

    Args:
        graph: Noisy graph D with a non-empty clean set.
        cfg1: Model-1 configuration.
        cfg2: Model-2 configuration.
        dcfg: Detector and threshold.
        ledger: Optional ground truth for quality metrics.
        solver: Influence solver settings.
        seed: Seed recorded in the report.
        workers: Thread cap for the influence computations.

    Returns:
        PipelineResult: D*, θ̂₂, the report, the table and the decisions.
    """
    scored = score_graph(graph, cfg1, solver=solver, workers=workers)
    return finish_pipeline(scored, cfg2, dcfg, ledger=ledger, seed=seed)


def successive(
    graph: Graph,
    cfg1: GcnConfig,
    cfg2: GcnConfig,
    dcfg: DenoiseConfig,
    ledger: CorruptionLedger,
    counts: Optional[int] = None,
    solver: Optional[SolverConfig] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> SuccessiveSeries:
    """
    Apply the pipeline ``counts`` times, feeding D* back in as D.

    Args:
        counts: Number of passes (defaults to ``dcfg.counts``).

    Returns:
        SuccessiveSeries: Initial noise fraction plus one record per count.
    """
    if ledger is None:
        raise ValidationError("successive application needs a corruption ledger")
    counts = dcfg.counts if counts is None else counts
    if counts < 1:
        raise ValidationError("counts must be >= 1")

    series = SuccessiveSeries(seed=seed, initial_noise_fraction=noise_fraction(ledger, graph.labels))
    current = graph
    for count in range(1, counts + 1):
        result = run_pipeline(
            current, cfg1, cfg2, dcfg, ledger=ledger, solver=solver, seed=seed, workers=workers
        )
        current = result.graph
        series.records.append(
            CountRecord(
                count=count,
                noise_fraction=result.report.metrics.noise_frac_after,
                test_acc=result.report.metrics.model2_test_acc,
                n_flagged=len(result.report.d_n),
                precision=result.report.metrics.precision,
                recall=result.report.metrics.recall,
            )
        )
    return series


# ============================================================================
# Sweeps and studies
# ============================================================================


def select_threshold(summary: Sequence[SweepSummaryRow]) -> Optional[float]:
    """Best mean validation accuracy; ties go to the larger threshold."""
    scored = [row for row in summary if row.val_acc_mean is not None]
    if not scored:
        return None
    best = max(scored, key=lambda row: (row.val_acc_mean, row.threshold))
    return best.threshold


def _summarize(rows: Sequence[SweepRow], grid: Sequence[float]) -> List[SweepSummaryRow]:
    summary = []
    for threshold in grid:
        cells = [row for row in rows if row.threshold == threshold]
        tests = [row.model2_test_acc for row in cells if row.model2_test_acc is not None]
        vals = [row.model2_val_acc for row in cells if row.model2_val_acc is not None]
        summary.append(
            SweepSummaryRow(
                threshold=threshold,
                n_seeds=len(cells),
                test_acc_mean=float(np.mean(tests)) if tests else None,
                test_acc_std=float(np.std(tests)) if tests else None,
                val_acc_mean=float(np.mean(vals)) if vals else None,
            )
        )
    return summary


def sweep(
    instances: Sequence[NoisyInstance],
    model1: ModelOptions,
    model2: ModelOptions,
    dcfg: DenoiseConfig,
    grid: Sequence[float],
    solver: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> SweepResult:
    """
    Run the pipeline for every threshold in ``grid`` and every seed.

    Model-1 and the influence table depend only on the seed, so they are
    computed once per seed and shared by all thresholds. The selected
    threshold maximizes mean Model-2 validation accuracy.

    Returns:
        SweepResult: One row per (threshold, seed), a per-threshold summary
        and the selected threshold.
    """
    if not grid:
        raise ValidationError("sweep grid is empty")
    configs = [dcfg.with_threshold(threshold) for threshold in grid]
    workers = resolve_workers(workers)

    def score(instance: NoisyInstance) -> Tuple[NoisyInstance, ScoredGraph, GcnConfig]:
        cfg1, cfg2 = bind_models(instance.graph, model1, model2, instance.seed)
        inner = 1 if len(instances) > 1 else workers
        return instance, score_graph(instance.graph, cfg1, solver=solver, workers=inner), cfg2

    scored = parallel_map(score, list(instances), workers)
    jobs = [(item, config) for item in scored for config in configs]

    def finish(job) -> SweepRow:
        (instance, scored_graph, cfg2), config = job
        result = finish_pipeline(scored_graph, cfg2, config, ledger=instance.ledger, seed=instance.seed)
        metrics = result.report.metrics
        return SweepRow(
            threshold=config.threshold,
            seed=instance.seed,
            n_flagged=len(result.report.d_n),
            model2_test_acc=metrics.model2_test_acc,
            model2_val_acc=metrics.model2_val_acc,
            noise_frac_after=metrics.noise_frac_after,
        )

    rows = parallel_map(finish, jobs, workers)
    summary = _summarize(rows, list(grid))
    selected = select_threshold(summary)
    logger.info("Sweep finished", method=dcfg.method.value, grid=list(grid), selected=selected)
    return SweepResult(method=dcfg.method, rows=rows, summary=summary, selected_threshold=selected)


def clean_order(graph: Graph, seed: int) -> np.ndarray:
    """Seeded permutation of the validation nodes; D_c of size s is its head."""
    rng = np.random.default_rng(seed)
    return rng.permutation(graph.masks.validation)


def clean_size_study(
    instances: Sequence[NoisyInstance],
    model1: ModelOptions,
    model2: ModelOptions,
    dcfg: DenoiseConfig,
    sizes: Sequence[int],
    solver: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> List[CleanSizeRow]:
    """
    Rerun the pipeline with D_c restricted to the first s validation nodes.

    The influence table over the largest clean set is built once per seed;
    smaller clean sets use its leading columns.
    """
    if not sizes or min(sizes) < 1:
        raise ValidationError("clean sizes must be positive")
    rows: List[CleanSizeRow] = []
    for instance in instances:
        graph = instance.graph
        order = clean_order(graph, instance.seed)
        if max(sizes) > order.size:
            raise ValidationError(
                f"clean size {max(sizes)} exceeds validation size {order.size}"
            )
        cfg1, cfg2 = bind_models(graph, model1, model2, instance.seed)
        theta, _ = gcn_service.train(graph, cfg1)
        context = build_context(graph, theta, cfg1, solver=solver, workers=workers)
        full = iup_table(context, clean_nodes=order[:max(sizes)])
        _require_valid(full)

        for size in sizes:
            table = InfluenceTable(
                train_nodes=full.train_nodes,
                clean_nodes=full.clean_nodes[:size],
                iup=full.iup[:, :size],
                n_train=full.n_train,
                solve_reports=full.solve_reports[:size],
            )
            sized = graph.with_masks(graph.masks.with_clean(order[:size]))
            scored = ScoredGraph(graph=sized, cfg=cfg1, theta=theta, context=context, table=table)
            result = finish_pipeline(scored, cfg2, dcfg, ledger=instance.ledger, seed=instance.seed)
            rows.append(
                CleanSizeRow(
                    clean_size=size,
                    seed=instance.seed,
                    n_flagged=len(result.report.d_n),
                    model2_test_acc=result.report.metrics.model2_test_acc,
                    noise_frac_after=result.report.metrics.noise_frac_after,
                )
            )
    return rows
