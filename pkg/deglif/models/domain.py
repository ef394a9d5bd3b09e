"""
Domain models for DeGLIF.

This module defines the numerical entities shared by the services:
- Graph, role masks, normalized adjacency and perturbations
- Noise transition matrices and corruption ledgers
- GCN forward caches and risk breakdowns
- Solver reports and influence tables
- Detector outputs, relabel decisions and retraining deltas

Arrays held by these containers are marked read-only on construction.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from deglif.core.errors import ValidationError
from deglif.schemas.reports import DenoiseReport


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def _frozen_copy(values: object, dtype: type) -> np.ndarray:
    array = np.asarray(values, dtype=dtype)
    if array.flags.writeable:
        array = array.copy()
    return _frozen(array)


def as_index_array(nodes: Sequence[int]) -> np.ndarray:
    """Sorted, deduplicated int64 node index array."""
    return np.unique(np.asarray(nodes, dtype=np.int64).ravel())


# ============================================================================
# Graph
# ============================================================================


@dataclass(frozen=True, eq=False)
class RoleMasks:
    """Node roles: training, validation, test and the clean subset D_c."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    clean: np.ndarray

    def __post_init__(self) -> None:
        for name in ("train", "validation", "test", "clean"):
            object.__setattr__(self, name, _frozen(as_index_array(getattr(self, name))))

    @classmethod
    def from_lists(
        cls,
        train: Sequence[int],
        validation: Sequence[int],
        test: Sequence[int],
        clean: Sequence[int],
    ) -> "RoleMasks":
        return cls(
            train=np.asarray(train, dtype=np.int64),
            validation=np.asarray(validation, dtype=np.int64),
            test=np.asarray(test, dtype=np.int64),
            clean=np.asarray(clean, dtype=np.int64),
        )

    def validate(self, n_nodes: int) -> None:
        """Raise ValidationError unless roles are in range and disjoint."""
        for name in ("train", "validation", "test", "clean"):
            nodes = getattr(self, name)
            if nodes.size and (nodes.min() < 0 or nodes.max() >= n_nodes):
                raise ValidationError(f"{name} mask references a node outside [0, {n_nodes})")
        pairs = (("train", "validation"), ("train", "test"), ("validation", "test"))
        for left, right in pairs:
            if np.intersect1d(getattr(self, left), getattr(self, right)).size:
                raise ValidationError(f"{left} and {right} masks overlap")
        if np.setdiff1d(self.clean, self.validation).size:
            raise ValidationError("clean ⊄ validation")

    def with_clean(self, clean: Sequence[int]) -> "RoleMasks":
        return replace(self, clean=np.asarray(clean, dtype=np.int64))

    def with_train(self, train: Sequence[int]) -> "RoleMasks":
        return replace(self, train=np.asarray(train, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with features, labels and role masks."""

    n_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    masks: RoleMasks
    node_ids: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(
            self, "features", _frozen_copy(self.features, np.float64)
        )
        object.__setattr__(self, "labels", _frozen_copy(self.labels, np.int64))
        if not self.node_ids:
            object.__setattr__(self, "node_ids", tuple(str(i) for i in range(self.n_nodes)))
        self.validate()

    def validate(self) -> None:
        """Raise ValidationError if any graph invariant is violated."""
        if self.features.ndim != 2 or self.features.shape[0] != self.n_nodes:
            raise ValidationError("feature matrix row count must equal n_nodes")
        if self.labels.shape != (self.n_nodes,):
            raise ValidationError("label vector length must equal n_nodes")
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")
        if self.edges.size:
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValidationError("self-loops are not allowed in the edge list")
            if self.edges.min() < 0 or self.edges.max() >= self.n_nodes:
                raise ValidationError(f"edge endpoint outside [0, {self.n_nodes})")
        if len(self.node_ids) != self.n_nodes:
            raise ValidationError("node id table length must equal n_nodes")
        self.masks.validate(self.n_nodes)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def has_edge(self, u: int, v: int) -> bool:
        a, b = (u, v) if u < v else (v, u)
        if not self.edges.size:
            return False
        return bool(np.any((self.edges[:, 0] == a) & (self.edges[:, 1] == b)))

    def with_edges(self, edges: np.ndarray) -> "Graph":
        return replace(self, edges=edges)

    def with_labels(self, labels: np.ndarray) -> "Graph":
        return replace(self, labels=labels)

    def with_masks(self, masks: RoleMasks) -> "Graph":
        return replace(self, masks=masks)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetric-normalized adjacency with self-loops, in CSR layout."""

    matrix: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return int(self.matrix.shape[0])

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ other)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


class PerturbationKind(str, Enum):
    """Kinds of structural perturbation."""
    REMOVE_NODE_EDGES = "remove_node_edges"
    REMOVE_EDGE = "remove_edge"


@dataclass(frozen=True)
class Perturbation:
    """Structural perturbation of a graph's edge set."""

    kind: PerturbationKind
    nodes: Tuple[int, ...]

    @classmethod
    def remove_node_edges(cls, node: int) -> "Perturbation":
        return cls(PerturbationKind.REMOVE_NODE_EDGES, (int(node),))

    @classmethod
    def remove_edge(cls, u: int, v: int) -> "Perturbation":
        return cls(PerturbationKind.REMOVE_EDGE, (int(u), int(v)))


# ============================================================================
# Noise
# ============================================================================


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic K x K label transition matrix Q."""

    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.array(self.q, dtype=np.float64, copy=True)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValidationError("transition matrix must be square")
        if np.any(q < 0) or np.any(q > 1):
            raise ValidationError("transition entries must lie in [0, 1]")
        if not np.allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValidationError("transition matrix rows must sum to 1")
        object.__setattr__(self, "q", _frozen(q))

    @property
    def n_classes(self) -> int:
        return int(self.q.shape[0])


@dataclass(frozen=True, eq=False)
class CorruptionLedger:
    """Ground truth of label corruption over the training mask."""

    nodes: np.ndarray
    original: np.ndarray
    observed: np.ndarray

    def __post_init__(self) -> None:
        for name in ("nodes", "original", "observed"):
            object.__setattr__(self, name, _frozen(np.array(getattr(self, name), dtype=np.int64)))
        if not (self.nodes.shape == self.original.shape == self.observed.shape):
            raise ValidationError("ledger columns must have equal length")

    @property
    def flipped(self) -> np.ndarray:
        return self.original != self.observed

    @property
    def n_flipped(self) -> int:
        return int(self.flipped.sum())

    def noise_fraction(self) -> float:
        """Fraction of recorded nodes whose observed label is wrong."""
        if not self.nodes.size:
            return 0.0
        return float(self.flipped.mean())

    def original_labels(self) -> Dict[int, int]:
        return {int(n): int(o) for n, o in zip(self.nodes, self.original)}


# ============================================================================
# GCN
# ============================================================================


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Intermediate activations of one forward pass."""

    ax: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    relu_mask: np.ndarray
    p: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    adjacency: NormalizedAdjacency

    @property
    def n_nodes(self) -> int:
        return int(self.logits.shape[0])


@dataclass(frozen=True, eq=False)
class RiskBreakdown:
    """Per-node losses and the (optionally regularized) mean risk."""

    nodes: np.ndarray
    node_losses: np.ndarray
    mean_loss: float
    reg_term: float

    @property
    def risk(self) -> float:
        return self.mean_loss + self.reg_term


# ============================================================================
# Influence
# ============================================================================


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Diagnostics of one damped conjugate-gradient solve."""

    solution: np.ndarray
    residual: float
    iterations: int
    converged: bool
    damping: float
    tol: float
    residual_trace: Tuple[float, ...] = ()
    breakdown: bool = False
    label: str = ""


@dataclass(frozen=True, eq=False)
class InfluenceTable:
    """I_up(-z, v) for training nodes z (rows) and clean nodes v (columns)."""

    train_nodes: np.ndarray
    clean_nodes: np.ndarray
    iup: np.ndarray
    n_train: int
    valid: bool = True
    solve_reports: Tuple[SolveReport, ...] = ()
    icv: np.ndarray = field(init=False)
    neg_fraction: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        iup = np.array(self.iup, dtype=np.float64, copy=True).reshape(
            len(self.train_nodes), len(self.clean_nodes)
        )
        object.__setattr__(self, "iup", _frozen(iup))
        object.__setattr__(self, "train_nodes", _frozen(np.asarray(self.train_nodes, dtype=np.int64)))
        object.__setattr__(self, "clean_nodes", _frozen(np.asarray(self.clean_nodes, dtype=np.int64)))
        object.__setattr__(self, "icv", _frozen(-iup.sum(axis=1)))
        if iup.shape[1]:
            neg = (iup < 0).sum(axis=1) / iup.shape[1]
        else:
            neg = np.zeros(iup.shape[0])
        object.__setattr__(self, "neg_fraction", _frozen(neg))

    def row_index(self, z: int) -> int:
        hits = np.flatnonzero(self.train_nodes == z)
        if not hits.size:
            raise ValidationError(f"node {z} is not a row of the influence table")
        return int(hits[0])

    def mean_iup(self) -> np.ndarray:
        """Predicted clean-risk delta per training node: mean over v of I_up(-z, v)."""
        return self.iup.mean(axis=1)


# ============================================================================
# Denoising and oracle
# ============================================================================


@dataclass(frozen=True, eq=False)
class NoisySet:
    """Detected noisy training nodes D_n with the evidence per node."""

    nodes: np.ndarray
    evidence: Dict[int, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", _frozen(as_index_array(self.nodes)))

    def __len__(self) -> int:
        return int(self.nodes.size)

    def __contains__(self, z: object) -> bool:
        return bool(np.any(self.nodes == z))


@dataclass(frozen=True, eq=False)
class RelabelDecision:
    """Relabel decision for one flagged node."""

    node: int
    old_label: int
    new_label: int
    phi: Optional[float]
    probs: np.ndarray


@dataclass(frozen=True, eq=False)
class RetrainDelta:
    """Exact retraining result for one modification."""

    description: str
    theta: np.ndarray
    clean_nodes: np.ndarray
    node_deltas: np.ndarray

    @property
    def aggregate(self) -> float:
        if not self.node_deltas.size:
            return 0.0
        return float(self.node_deltas.mean())


@dataclass
class PipelineResult:
    """Outputs of one denoising pass."""

    graph: "Graph"
    theta: np.ndarray
    report: DenoiseReport
    table: Optional[InfluenceTable] = None
    decisions: List[RelabelDecision] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class NoisyInstance:
    """One seed's noisy graph with its corruption ledger (None for trusted labels)."""

    seed: int
    graph: Graph
    ledger: Optional[CorruptionLedger] = None
