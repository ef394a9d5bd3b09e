"""
Noise service: label-noise transition matrices and training-label corruption.

This module provides:
- Symmetric (SLN) and pairwise transition matrices
- Seeded corruption of training labels with a ground-truth ledger, and its undo
- Ledger CSV round trip and noise-fraction bookkeeping
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from deglif.core.errors import ValidationError
from deglif.models import CorruptionLedger, Graph, TransitionMatrix
from deglif.schemas.config import NoiseModel, NoiseSpec
from deglif.utils.logging import get_logger

logger = get_logger(__name__)

LEDGER_COLUMNS = ["node", "original", "observed", "flipped"]


def build_transition(spec: NoiseSpec) -> TransitionMatrix:
    """
    Build the K x K transition matrix of a noise model.

    SLN puts 1 - level on the diagonal and level/(K-1) everywhere else.
    Pairwise moves probability ``level`` to the next class (cyclically).

    Args:
        spec: Validated noise spec; ``level`` is the total flip probability.

    Returns:
        TransitionMatrix: Row-stochastic matrix Q with Q[true, observed].
    """
    k = spec.n_classes
    eta = spec.level
    if spec.model == NoiseModel.SLN:
        q = np.full((k, k), eta / (k - 1))
        np.fill_diagonal(q, 1.0 - eta)
    else:
        q = np.eye(k) * (1.0 - eta)
        q[np.arange(k), (np.arange(k) + 1) % k] += eta
    return TransitionMatrix(q=q)


def inject(
    graph: Graph, transition: TransitionMatrix, seed: int
) -> Tuple[Graph, CorruptionLedger]:
    """
    Resample every training label from its row of Q.

    Validation, test and clean labels are left untouched.

    Args:
        graph: Graph with trusted labels.
        transition: Transition matrix matching the graph's class count.
        seed: Generator seed.

    Returns:
        Tuple of the corrupted graph and the ledger over the training mask.
    """
    if transition.n_classes != graph.n_classes:
        raise ValidationError(
            f"transition matrix is {transition.n_classes}x{transition.n_classes}, "
            f"graph has K={graph.n_classes}"
        )
    rng = np.random.default_rng(seed)
    nodes = graph.masks.train
    original = graph.labels[nodes]

    # Inverse-CDF sampling, one uniform per node in training-mask order
    cdf = np.cumsum(transition.q, axis=1)
    draws = rng.random(nodes.size)
    observed = (draws[:, None] >= cdf[original]).sum(axis=1)
    observed = np.minimum(observed, graph.n_classes - 1)

    labels = graph.labels.copy()
    labels[nodes] = observed
    ledger = CorruptionLedger(nodes=nodes, original=original, observed=observed)
    logger.info(
        "Injected label noise",
        seed=seed,
        n_train=int(nodes.size),
        n_flipped=ledger.n_flipped,
    )
    return graph.with_labels(labels), ledger


def restore_labels(graph: Graph, ledger: CorruptionLedger) -> Graph:
    """Undo a recorded corruption: ledger nodes get their original labels back."""
    if ledger.nodes.size and ledger.nodes.max() >= graph.n_nodes:
        raise ValidationError("ledger names nodes outside the graph")
    labels = graph.labels.copy()
    labels[ledger.nodes] = ledger.original
    return graph.with_labels(labels)


def noise_fraction(ledger: CorruptionLedger, labels: np.ndarray) -> float:
    """Fraction of ledger nodes whose current label differs from the original."""
    if not ledger.nodes.size:
        return 0.0
    return float(np.mean(np.asarray(labels)[ledger.nodes] != ledger.original))


def write_ledger(ledger: CorruptionLedger, path: Union[str, Path]) -> Path:
    """Write the ledger as CSV ``node,original,observed,flipped``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "node": ledger.nodes,
            "original": ledger.original,
            "observed": ledger.observed,
            "flipped": ledger.flipped,
        },
        columns=LEDGER_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def read_ledger(path: Union[str, Path]) -> CorruptionLedger:
    """Read a ledger CSV; the ``flipped`` column must agree with the labels."""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in LEDGER_COLUMNS if column not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: ledger is missing columns {missing}")
    ledger = CorruptionLedger(
        nodes=frame["node"].to_numpy(dtype=np.int64),
        original=frame["original"].to_numpy(dtype=np.int64),
        observed=frame["observed"].to_numpy(dtype=np.int64),
    )
    if not np.array_equal(frame["flipped"].astype(bool).to_numpy(), ledger.flipped):
        raise ValidationError(f"{path}: flipped column disagrees with labels")
    return ledger
