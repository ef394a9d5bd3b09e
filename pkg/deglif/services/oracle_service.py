"""
Oracle service: brute-force retraining ground truth for small graphs.

Every retrain starts from the same initialization and schedule as the
baseline model. Clean-node losses of both models are evaluated on the
original graph, so a delta measures the parameter change alone.
"""

from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from deglif.core.config import get_settings
from deglif.core.errors import ScaleGuardError, ValidationError
from deglif.models import Graph, InfluenceTable, RelabelDecision, RetrainDelta
from deglif.schemas.config import GcnConfig, RelabelMode
from deglif.schemas.reports import AgreementReport
from deglif.services import gcn_service
from deglif.services.graph_service import isolate_nodes, normalize
from deglif.services.influence_service import InfluenceContext, iup_table
from deglif.utils.logging import get_logger
from deglif.utils.parallel import parallel_map

logger = get_logger(__name__)

PathLike = Union[str, Path]
ZERO_PREDICTION = 1e-9


def check_scale(graph: Graph, force: bool = False) -> None:
    """Refuse graphs above the configured oracle size unless forced."""
    limit = get_settings().oracle_max_nodes
    if graph.n_nodes > limit and not force:
        raise ScaleGuardError(
            f"graph has {graph.n_nodes} nodes; the oracle retrains once per training node "
            f"and is limited to {limit} (pass --force or raise DEGLIF_ORACLE_MAX_NODES)",
            {"n_nodes": str(graph.n_nodes), "limit": str(limit)},
        )


def clean_losses(
    graph: Graph, theta: np.ndarray, cfg: GcnConfig, clean_nodes: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Per-node cross-entropy on the clean set of ``graph``."""
    nodes = graph.masks.clean if clean_nodes is None else np.asarray(clean_nodes, dtype=np.int64)
    cache = gcn_service.forward(
        normalize(graph), graph.features, theta, gcn_service.ParamLayout.from_config(cfg)
    )
    return gcn_service.node_losses(cache, graph.labels, nodes)


def _delta(
    graph: Graph,
    cfg: GcnConfig,
    description: str,
    theta: np.ndarray,
    baseline: np.ndarray,
    clean_nodes: Optional[Sequence[int]],
) -> RetrainDelta:
    nodes = graph.masks.clean if clean_nodes is None else np.asarray(clean_nodes, dtype=np.int64)
    deltas = clean_losses(graph, theta, cfg, nodes) - clean_losses(graph, baseline, cfg, nodes)
    return RetrainDelta(
        description=description,
        theta=theta,
        clean_nodes=nodes,
        node_deltas=deltas,
    )


def retrain_without(
    graph: Graph,
    cfg: GcnConfig,
    nodes: Iterable[int],
    baseline: Optional[np.ndarray] = None,
    clean_nodes: Optional[Sequence[int]] = None,
) -> RetrainDelta:
    """
    Retrain with the nodes' loss terms dropped and their edges removed.

    The loss normalizer stays at |V_train| (removal as ε = -1/n).

    Args:
        graph: Graph the baseline was trained on.
        cfg: Baseline model configuration.
        nodes: Training nodes to remove.
        baseline: Baseline θ̂ (retrained from ``cfg`` when omitted).
        clean_nodes: Nodes the deltas are measured on (defaults to D_c).

    Returns:
        RetrainDelta: Retrained θ and clean-node loss deltas.
    """
    removed = np.unique(np.asarray(list(nodes), dtype=np.int64))
    outside = np.setdiff1d(removed, graph.masks.train)
    if outside.size:
        raise ValidationError(f"nodes {outside.tolist()} are not in the training mask")
    if baseline is None:
        baseline, _ = gcn_service.train(graph, cfg)
    description = f"remove {removed.tolist()}"
    if not removed.size:
        return _delta(graph, cfg, description, baseline, baseline, clean_nodes)

    perturbed = isolate_nodes(graph, removed)
    theta, _ = gcn_service.train(
        perturbed, cfg, node_weights={int(z): 0.0 for z in removed}
    )
    return _delta(graph, cfg, description, theta, baseline, clean_nodes)


def retrain_relabel(
    graph: Graph,
    cfg: GcnConfig,
    decisions: Sequence[RelabelDecision],
    mode: RelabelMode = RelabelMode.HARD,
    baseline: Optional[np.ndarray] = None,
    clean_nodes: Optional[Sequence[int]] = None,
) -> RetrainDelta:
    """
    Retrain with relabelled nodes.

    HARD replaces the labels. PHI also scales each relabelled node's loss
    by its φ (a constant during retraining).
    """
    if baseline is None:
        baseline, _ = gcn_service.train(graph, cfg)
    labels = graph.labels.copy()
    weights: Dict[int, float] = {}
    train = set(graph.masks.train.tolist())
    for decision in decisions:
        if decision.node not in train:
            raise ValidationError(f"node {decision.node} is not in the training mask")
        labels[decision.node] = decision.new_label
        if mode == RelabelMode.PHI:
            if decision.phi is None:
                raise ValidationError(f"φ is undefined for node {decision.node}")
            weights[decision.node] = decision.phi
    theta, _ = gcn_service.train(graph.with_labels(labels), cfg, node_weights=weights or None)
    description = f"relabel[{mode.value}] {[d.node for d in decisions]}"
    return _delta(graph, cfg, description, theta, baseline, clean_nodes)


def predicted_deltas(table: InfluenceTable) -> np.ndarray:
    """Predicted clean-risk change per training node: (1/|D_c|)·Σ_v I_up(-z, v)."""
    return table.mean_iup()


def compare(predictions: Sequence[float], deltas: Sequence[float]) -> AgreementReport:
    """
    Sign agreement and Spearman correlation between predictions and deltas.

    A zero delta agrees only with a prediction of magnitude below 1e-9.
    Spearman is taken over the nonzero deltas and is None when undefined.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if predictions.shape != deltas.shape:
        raise ValidationError(
            f"size mismatch: {predictions.size} predictions vs {deltas.size} deltas"
        )
    if not deltas.size:
        return AgreementReport(sign_agreement=1.0, spearman=None, n_nodes=0)

    zero = deltas == 0.0
    agree = np.where(
        zero,
        np.abs(predictions) < ZERO_PREDICTION,
        np.sign(predictions) == np.sign(deltas),
    )
    spearman: Optional[float] = None
    if (~zero).sum() >= 2:
        value = spearmanr(predictions[~zero], deltas[~zero])[0]
        if np.isfinite(value):
            spearman = float(np.clip(value, -1.0, 1.0))
    return AgreementReport(
        sign_agreement=float(agree.mean()), spearman=spearman, n_nodes=int(deltas.size)
    )


def influence_vs_retraining(
    graph: Graph,
    cfg: GcnConfig,
    ctx: InfluenceContext,
    nodes: Optional[Sequence[int]] = None,
    table: Optional[InfluenceTable] = None,
    workers: Optional[int] = None,
    force: bool = False,
) -> Tuple[AgreementReport, pd.DataFrame]:
    """
    Compare predicted and retrained clean-risk deltas node by node.

    Args:
        graph: Graph the context was built on.
        cfg: Model configuration that produced ``ctx.theta``.
        ctx: Influence context at the baseline θ̂.
        nodes: Training nodes to test (defaults to all).
        table: Precomputed influence table covering ``nodes``.
        workers: Thread cap for the retrains.
        force: Skip the scale guard.

    Returns:
        Tuple of the agreement report and a frame ``z,prediction,delta``.
    """
    check_scale(graph, force=force)
    rows = graph.masks.train if nodes is None else np.asarray(nodes, dtype=np.int64)
    if table is None:
        table = iup_table(ctx, train_nodes=rows)
    predictions = predicted_deltas(table)
    position = {int(z): i for i, z in enumerate(table.train_nodes)}
    predictions = np.array([predictions[position[int(z)]] for z in rows])

    deltas = parallel_map(
        lambda z: retrain_without(graph, cfg, [z], baseline=ctx.theta).aggregate,
        rows.tolist(),
        workers,
    )
    report = compare(predictions, deltas)
    logger.info(
        "Oracle comparison finished",
        n_nodes=report.n_nodes,
        sign_agreement=report.sign_agreement,
        spearman=report.spearman,
    )
    pairs = pd.DataFrame({"z": rows, "prediction": predictions, "delta": deltas})
    return report, pairs


def write_agreement(report: AgreementReport, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def write_pairs(pairs: pd.DataFrame, path: PathLike) -> Path:
    """Write ``z,prediction,delta`` for scatter plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pairs.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_pairs(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
