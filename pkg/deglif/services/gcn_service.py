"""
GCN service: two-layer graph convolutional network in float64 numpy.

The architecture is fixed as ``M = Â·relu(ÂXW1 + b1)·W2 + b2`` with a
row softmax on top. Parameters live in one flat vector ordered
W1, b1, W2, b2.

This module provides:
- Glorot initialization, forward pass and per-node losses
- A single reverse pass driven by a target matrix (mean, summed,
  node-weighted and soft-target losses all go through it)
- The exact Hessian-vector product of the loss part (ReLU mask frozen)
- Full-batch gradient-descent training, prediction and accuracy
- CSV readers and writers for parameter vectors and training histories
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax

from deglif.core.errors import NumericalError, ValidationError
from deglif.models import ForwardCache, Graph, NormalizedAdjacency, RiskBreakdown
from deglif.schemas.config import GcnConfig
from deglif.services.graph_service import normalize
from deglif.utils.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
PARAM_ORDER = ("W1", "b1", "W2", "b2")


# ============================================================================
# Parameter layout
# ============================================================================


@dataclass(frozen=True)
class ParamLayout:
    """Shapes of the parameter blocks inside the flat vector."""

    input_dim: int
    hidden_dim: int
    n_classes: int

    @classmethod
    def from_config(cls, cfg: GcnConfig) -> "ParamLayout":
        return cls(cfg.input_dim, cfg.hidden_dim, cfg.n_classes)

    @property
    def shapes(self) -> Tuple[Tuple[int, ...], ...]:
        d, h, k = self.input_dim, self.hidden_dim, self.n_classes
        return ((d, h), (h,), (h, k), (k,))

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.shapes)

    def unpack(self, theta: np.ndarray) -> Tuple[np.ndarray, ...]:
        """Split a flat vector into (W1, b1, W2, b2) views."""
        theta = np.asarray(theta)
        if theta.shape != (self.size,):
            raise ValidationError(
                f"parameter vector has shape {theta.shape}, expected ({self.size},)"
            )
        blocks = []
        offset = 0
        for shape in self.shapes:
            count = int(np.prod(shape))
            blocks.append(theta[offset:offset + count].reshape(shape))
            offset += count
        return tuple(blocks)

    def pack(self, *blocks: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(block, dtype=np.float64).ravel() for block in blocks])


def init_params(cfg: GcnConfig) -> np.ndarray:
    """
    Glorot-uniform weights and zero biases from the seeded generator.

    Args:
        cfg: Model configuration; ``init_seed`` fixes the draw.

    Returns:
        Flat parameter vector of length d·h + h + h·K + K.
    """
    layout = ParamLayout.from_config(cfg)
    rng = np.random.default_rng(cfg.init_seed)
    d, h, k = layout.input_dim, layout.hidden_dim, layout.n_classes
    bound1 = np.sqrt(6.0 / (d + h))
    bound2 = np.sqrt(6.0 / (h + k))
    w1 = rng.uniform(-bound1, bound1, size=(d, h))
    w2 = rng.uniform(-bound2, bound2, size=(h, k))
    return layout.pack(w1, np.zeros(h), w2, np.zeros(k))


# ============================================================================
# Forward pass and losses
# ============================================================================


def forward(
    adjacency: NormalizedAdjacency,
    features: np.ndarray,
    theta: np.ndarray,
    layout: ParamLayout,
    ax: Optional[np.ndarray] = None,
) -> ForwardCache:
    """
    Run the forward pass and keep every intermediate.

    Args:
        adjacency: Normalized adjacency Â.
        features: Node features X (n x d).
        theta: Flat parameter vector.
        layout: Parameter layout.
        ax: Precomputed ÂX, reused across training epochs.

    Returns:
        ForwardCache: Activations, logits M and probabilities F.

    Raises:
        NumericalError: θ or X holds non-finite values.
    """
    if not np.all(np.isfinite(theta)):
        raise NumericalError("parameter vector holds non-finite values")
    w1, b1, w2, b2 = layout.unpack(theta)
    if ax is None:
        if not np.all(np.isfinite(features)):
            raise NumericalError("feature matrix holds non-finite values")
        ax = adjacency @ features
    z1 = ax @ w1 + b1
    relu_mask = z1 > 0
    h1 = np.where(relu_mask, z1, 0.0)
    p = adjacency @ h1
    logits = p @ w2 + b2
    return ForwardCache(
        ax=ax,
        z1=z1,
        h1=h1,
        relu_mask=relu_mask,
        p=p,
        logits=logits,
        probs=softmax(logits, axis=1),
        adjacency=adjacency,
    )


def label_targets(
    labels: np.ndarray,
    nodes: Sequence[int],
    n_classes: int,
    weights: Optional[Dict[int, float]] = None,
    normalizer: Optional[float] = None,
) -> np.ndarray:
    """
    Target matrix T for the loss Σ_i Σ_k -T[i, k]·log F[i, k].

    Row i of T is the one-hot label of node i times its weight divided by
    the normalizer; nodes outside ``nodes`` get zero rows.

    Args:
        labels: Label vector over all nodes.
        nodes: Nodes whose losses enter the objective.
        n_classes: K.
        weights: Per-node weight overrides (default 1).
        normalizer: Divisor; defaults to ``len(nodes)`` (mean loss).

    Returns:
        Dense (n x K) target matrix.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    targets = np.zeros((len(labels), n_classes))
    if not nodes.size:
        return targets
    scale = float(len(nodes) if normalizer is None else normalizer)
    row_weights = np.ones(nodes.size)
    if weights:
        for position, node in enumerate(nodes):
            row_weights[position] = weights.get(int(node), 1.0)
    targets[nodes, np.asarray(labels)[nodes]] = row_weights / scale
    return targets


def target_loss(cache: ForwardCache, targets: np.ndarray) -> float:
    """Value of Σ_i Σ_k -T[i, k]·log F[i, k]."""
    rows = np.flatnonzero(targets.any(axis=1))
    if not rows.size:
        return 0.0
    log_probs = log_softmax(cache.logits[rows], axis=1)
    return float(-np.sum(targets[rows] * log_probs))


def node_losses(cache: ForwardCache, labels: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
    """Cross-entropy -log F[i, y_i] for each node in ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    log_probs = log_softmax(cache.logits[nodes], axis=1)
    return -log_probs[np.arange(nodes.size), np.asarray(labels)[nodes]]


def risk(
    cache: ForwardCache,
    labels: np.ndarray,
    nodes: Sequence[int],
    theta: np.ndarray,
    l2_reg: float,
    include_reg: bool = True,
) -> RiskBreakdown:
    """
    Mean cross-entropy over ``nodes`` plus (λ/2)‖θ‖² when ``include_reg``.

    The training objective includes the regularizer; risk on the clean set
    is reported without it.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if not nodes.size:
        raise ValidationError("risk requires a non-empty node set")
    losses = node_losses(cache, labels, nodes)
    reg_term = 0.5 * l2_reg * float(theta @ theta) if include_reg else 0.0
    return RiskBreakdown(
        nodes=nodes,
        node_losses=losses,
        mean_loss=float(losses.mean()),
        reg_term=reg_term,
    )


# ============================================================================
# Reverse pass and Hessian-vector product
# ============================================================================


def backprop(
    cache: ForwardCache, theta: np.ndarray, layout: ParamLayout, targets: np.ndarray
) -> np.ndarray:
    """
    Gradient of the target loss Σ_i Σ_k -T[i, k]·log F[i, k] w.r.t. θ.

    With s_i the row sum of T, the logit gradient is s_i·F_i - T_i.
    The ReLU subgradient at 0 is 0. No regularization is added.
    """
    grad_m = targets.sum(axis=1, keepdims=True) * cache.probs - targets
    return backprop_logits(cache, theta, layout, grad_m)


def backprop_logits(
    cache: ForwardCache, theta: np.ndarray, layout: ParamLayout, grad_m: np.ndarray
) -> np.ndarray:
    """Pull a gradient w.r.t. the logits M back to θ."""
    _, _, w2, _ = layout.unpack(theta)
    grad_w2 = cache.p.T @ grad_m
    grad_b2 = grad_m.sum(axis=0)
    # Â is symmetric, so Âᵀ·G = Â·G
    grad_z1 = (cache.adjacency @ (grad_m @ w2.T)) * cache.relu_mask
    grad_w1 = cache.ax.T @ grad_z1
    grad_b1 = grad_z1.sum(axis=0)
    return layout.pack(grad_w1, grad_b1, grad_w2, grad_b2)


def gradient(
    adjacency: NormalizedAdjacency,
    features: np.ndarray,
    labels: np.ndarray,
    nodes: Sequence[int],
    theta: np.ndarray,
    layout: ParamLayout,
    l2_reg: float,
    include_reg: bool = True,
) -> np.ndarray:
    """
    Exact gradient of the mean loss over ``nodes`` (+ λθ if ``include_reg``).

    A single node gives the per-node gradient ∇L(z, θ).
    """
    cache = forward(adjacency, features, theta, layout)
    targets = label_targets(labels, nodes, layout.n_classes)
    grad = backprop(cache, theta, layout, targets)
    if include_reg:
        grad = grad + l2_reg * theta
    return grad


def hessian_vector_product(
    cache: ForwardCache,
    theta: np.ndarray,
    layout: ParamLayout,
    targets: np.ndarray,
    vector: np.ndarray,
) -> np.ndarray:
    """
    Directional derivative of :func:`backprop` along ``vector``.

    The ReLU activation pattern is held at the cached one; since ReLU is
    piecewise linear this is the exact Hessian of the loss part away
    from activation boundaries.

    Args:
        cache: Forward pass at θ.
        theta: Parameters the cache was computed at.
        layout: Parameter layout.
        targets: Target matrix defining the loss.
        vector: Direction v.

    Returns:
        H_loss·v (no regularization or damping).
    """
    _, _, w2, _ = layout.unpack(theta)
    v1, c1, v2, c2 = layout.unpack(vector)
    adjacency = cache.adjacency
    probs = cache.probs
    row_sums = targets.sum(axis=1, keepdims=True)

    d_p = adjacency @ ((cache.ax @ v1 + c1) * cache.relu_mask)
    d_m = d_p @ w2 + cache.p @ v2 + c2
    d_probs = probs * (d_m - np.sum(probs * d_m, axis=1, keepdims=True))
    grad_m = row_sums * probs - targets
    d_grad_m = row_sums * d_probs

    d_w2 = d_p.T @ grad_m + cache.p.T @ d_grad_m
    d_b2 = d_grad_m.sum(axis=0)
    d_grad_p = d_grad_m @ w2.T + grad_m @ v2.T
    d_grad_z1 = (adjacency @ d_grad_p) * cache.relu_mask
    d_w1 = cache.ax.T @ d_grad_z1
    d_b1 = d_grad_z1.sum(axis=0)
    return layout.pack(d_w1, d_b1, d_w2, d_b2)


# ============================================================================
# Training and prediction
# ============================================================================


def train(
    graph: Graph,
    cfg: GcnConfig,
    node_weights: Optional[Dict[int, float]] = None,
    adjacency: Optional[NormalizedAdjacency] = None,
) -> Tuple[np.ndarray, List[float]]:
    """
    Full-batch gradient descent on the regularized training risk.

    Runs ``cfg.epochs`` fixed-step updates, stopping early once the full
    gradient norm drops to ``cfg.grad_tol``. The stopping iterate is
    returned without a further update, so retraining from the same
    initialization and schedule is deterministic.

    Args:
        graph: Graph whose training-mask labels are fitted.
        cfg: Model configuration and schedule.
        node_weights: Per-node loss weights; the normalizer stays at
            |V_train|, so weight 0 drops a loss term.
        adjacency: Propagation matrix (defaults to ``normalize(graph)``).

    Returns:
        Tuple of the final θ̂ and the per-epoch training risk.

    Raises:
        ValidationError: Empty training mask.
        NumericalError: The risk became non-finite.
    """
    nodes = graph.masks.train
    if not nodes.size:
        raise ValidationError("training mask is empty")
    layout = ParamLayout.from_config(cfg)
    if layout.input_dim != graph.feature_dim or layout.n_classes != graph.n_classes:
        raise ValidationError("model shapes do not match the graph")

    adjacency = adjacency if adjacency is not None else normalize(graph)
    ax = adjacency @ graph.features
    targets = label_targets(graph.labels, nodes, graph.n_classes, weights=node_weights)
    theta = init_params(cfg)
    history: List[float] = []
    grad_norm: Optional[float] = None

    for epoch in range(cfg.epochs):
        cache = forward(adjacency, graph.features, theta, layout, ax=ax)
        value = target_loss(cache, targets) + 0.5 * cfg.l2_reg * float(theta @ theta)
        if not np.isfinite(value):
            logger.error("Training diverged", epoch=epoch, learning_rate=cfg.learning_rate)
            raise NumericalError(
                f"training risk became non-finite at epoch {epoch}; lower the learning rate",
                {"epoch": str(epoch)},
            )
        history.append(value)
        grad = backprop(cache, theta, layout, targets) + cfg.l2_reg * theta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.grad_tol:
            break
        theta = theta - cfg.learning_rate * grad

    if not np.all(np.isfinite(theta)):
        raise NumericalError("training produced non-finite parameters")
    logger.debug(
        "Trained GCN",
        epochs=len(history),
        max_epochs=cfg.epochs,
        init_seed=cfg.init_seed,
        final_risk=history[-1] if history else None,
        grad_norm=grad_norm,
    )
    return theta, history


def predict(
    adjacency: NormalizedAdjacency,
    features: np.ndarray,
    theta: np.ndarray,
    layout: ParamLayout,
) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted classes (ties toward the lowest index) and probabilities F."""
    cache = forward(adjacency, features, theta, layout)
    return np.argmax(cache.probs, axis=1), cache.probs


def accuracy(predictions: np.ndarray, labels: np.ndarray, nodes: Sequence[int]) -> Optional[float]:
    """Accuracy over ``nodes``; None for an empty node set."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if not nodes.size:
        return None
    return float(np.mean(np.asarray(predictions)[nodes] == np.asarray(labels)[nodes]))


# ============================================================================
# Serialization
# ============================================================================


def write_params(theta: np.ndarray, layout: ParamLayout, path: PathLike) -> Path:
    """
    Write θ as CSV ``index,value`` after a header line recording the layout.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        f"# d={layout.input_dim} h={layout.hidden_dim} "
        f"K={layout.n_classes} order={','.join(PARAM_ORDER)}\n"
    )
    frame = pd.DataFrame({"index": np.arange(theta.size), "value": theta})
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(header)
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_params(path: PathLike) -> Tuple[np.ndarray, ParamLayout]:
    """Read a parameter CSV written by :func:`write_params`."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        header = handle.readline().strip()
    if not header.startswith("#"):
        raise ValidationError(f"{path}: missing layout header")
    fields = dict(item.split("=", 1) for item in header.lstrip("# ").split())
    if fields.get("order") != ",".join(PARAM_ORDER):
        raise ValidationError(f"{path}: unsupported parameter order {fields.get('order')!r}")
    layout = ParamLayout(int(fields["d"]), int(fields["h"]), int(fields["K"]))
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    theta = frame.sort_values("index")["value"].to_numpy(dtype=np.float64)
    if theta.size != layout.size:
        raise ValidationError(f"{path}: expected {layout.size} values, found {theta.size}")
    return theta, layout


def write_history(history: Sequence[float], path: PathLike) -> Path:
    """Write the training history as CSV ``epoch,train_risk``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"epoch": np.arange(len(history)), "train_risk": list(history)})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_history(path: PathLike) -> List[float]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return frame.sort_values("epoch")["train_risk"].astype(float).tolist()
