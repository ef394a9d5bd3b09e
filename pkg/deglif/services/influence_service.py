"""
Influence service: graph-aware leave-one-out influence functions.

This module provides:
- Damped Hessian-vector products (analytic and finite-difference backends)
- A conjugate-gradient inverse-HVP solver with per-solve diagnostics
- Node-removal, edge-removal, loss-part and relabel influence
- The clean-set influence table I_up(-z, v) and its CSV writers

Every influence here fixes the up-weight to ε = -1/n with n = |V_train|.
The Hessian is that of the regularized mean training risk at θ̂ and is
shared by all solves of one context.
"""

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from deglif.core.config import HvpBackend
from deglif.core.errors import NumericalError, ValidationError
from deglif.models import (
    ForwardCache,
    Graph,
    InfluenceTable,
    NormalizedAdjacency,
    Perturbation,
    SolveReport,
)
from deglif.schemas.config import GcnConfig, RelabelMode, SolverConfig
from deglif.services.gcn_service import (
    ParamLayout,
    backprop,
    backprop_logits,
    forward,
    hessian_vector_product,
    label_targets,
)
from deglif.services.graph_service import isolate_nodes, normalize, perturb
from deglif.utils.logging import get_logger
from deglif.utils.parallel import parallel_map

logger = get_logger(__name__)

PathLike = Union[str, Path]

# First rung of the damping ladder when the configured damping is zero.
MIN_ESCALATED_DAMPING = 1e-4


# ============================================================================
# Hessian-vector products
# ============================================================================


@dataclass(frozen=True, eq=False)
class HvpOperator:
    """
    v ↦ (H + λ_damp·I)·v for the regularized mean training risk at θ̂.

    The operator is read-only once bound and may be shared by worker threads.
    """

    cache: ForwardCache
    features: np.ndarray
    theta: np.ndarray
    layout: ParamLayout
    targets: np.ndarray
    l2_reg: float
    damping: float
    backend: HvpBackend = HvpBackend.ANALYTIC

    def __call__(self, vector: np.ndarray) -> np.ndarray:
        return hvp(self, vector)

    @property
    def n_params(self) -> int:
        return self.layout.size


def build_operator(
    graph: Graph,
    theta: np.ndarray,
    layout: ParamLayout,
    l2_reg: float,
    damping: float,
    backend: HvpBackend = HvpBackend.ANALYTIC,
    adjacency: Optional[NormalizedAdjacency] = None,
    nodes: Optional[Sequence[int]] = None,
) -> HvpOperator:
    """
    Bind an HVP operator to a graph, θ̂ and the training mask.

    Args:
        graph: Graph holding features and (observed) labels.
        theta: Trained parameters θ̂.
        layout: Parameter layout.
        l2_reg: λ_reg of the training objective.
        damping: λ_damp added to the Hessian.
        backend: Analytic or finite-difference products.
        adjacency: Propagation matrix (defaults to ``normalize(graph)``).
        nodes: Loss nodes (defaults to the training mask; may be empty).
    """
    if l2_reg + damping <= 0:
        raise ValidationError("l2_reg + damping must be positive")
    adjacency = adjacency if adjacency is not None else normalize(graph)
    nodes = graph.masks.train if nodes is None else np.asarray(nodes, dtype=np.int64)
    return HvpOperator(
        cache=forward(adjacency, graph.features, theta, layout),
        features=graph.features,
        theta=np.asarray(theta, dtype=np.float64),
        layout=layout,
        targets=label_targets(graph.labels, nodes, layout.n_classes),
        l2_reg=l2_reg,
        damping=damping,
        backend=backend,
    )


def _loss_gradient_at(op: HvpOperator, theta: np.ndarray) -> np.ndarray:
    cache = forward(op.cache.adjacency, op.features, theta, op.layout, ax=op.cache.ax)
    return backprop(cache, theta, op.layout, op.targets)


def hvp(op: HvpOperator, vector: np.ndarray) -> np.ndarray:
    """
    Evaluate (H + λ_damp·I)·v.

    The analytic backend differentiates the reverse pass with the ReLU
    mask frozen at θ̂. The finite-difference backend takes a central
    difference of the loss gradient with
    ε = 1e-4·(1 + ‖θ̂‖)/max(‖v‖, 1e-12). Both add (λ_reg + λ_damp)·v.
    """
    vector = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(vector)):
        raise NumericalError("HVP direction holds non-finite values")
    if op.backend == HvpBackend.ANALYTIC:
        loss_part = hessian_vector_product(op.cache, op.theta, op.layout, op.targets, vector)
    else:
        eps = 1e-4 * (1.0 + np.linalg.norm(op.theta)) / max(np.linalg.norm(vector), 1e-12)
        plus = _loss_gradient_at(op, op.theta + eps * vector)
        minus = _loss_gradient_at(op, op.theta - eps * vector)
        loss_part = (plus - minus) / (2.0 * eps)
    return loss_part + (op.l2_reg + op.damping) * vector


def dense_hessian(op: HvpOperator) -> np.ndarray:
    """Materialize the damped operator column by column (small p only)."""
    eye = np.eye(op.n_params)
    return np.column_stack([op(eye[:, j]) for j in range(op.n_params)])


# ============================================================================
# Conjugate gradient
# ============================================================================


def inverse_hvp(
    op: HvpOperator,
    rhs: np.ndarray,
    tol: float = 1e-6,
    max_iters: int = 1000,
    label: str = "",
) -> SolveReport:
    """
    Solve (H + λ_damp·I)·s = rhs by conjugate gradient.

    The reported solution is the iterate with the smallest relative
    residual seen so far, and ``residual_trace`` records that running
    minimum, so the trace never increases. Non-positive curvature along a
    search direction stops the solve with ``breakdown=True``.

    Args:
        op: Damped HVP operator.
        rhs: Right-hand side.
        tol: Relative residual target ‖r‖/‖rhs‖.
        max_iters: Iteration cap.
        label: Free-form tag carried into the report.

    Returns:
        SolveReport: Solution plus diagnostics.

    Raises:
        NumericalError: An iterate became non-finite.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_norm = float(np.linalg.norm(rhs))
    if not np.isfinite(rhs_norm):
        raise NumericalError(f"non-finite right-hand side in solve {label!r}")
    if rhs_norm == 0.0:
        return SolveReport(
            solution=np.zeros_like(rhs),
            residual=0.0,
            iterations=0,
            converged=True,
            damping=op.damping,
            tol=tol,
            residual_trace=(0.0,),
            label=label,
        )

    x = np.zeros_like(rhs)
    r = rhs.copy()
    direction = r.copy()
    rs = float(r @ r)
    best_x, best_residual = x.copy(), 1.0
    trace: List[float] = [1.0]
    breakdown = False
    iterations = 0

    for iterations in range(1, max_iters + 1):
        op_direction = op(direction)
        curvature = float(direction @ op_direction)
        if not np.isfinite(curvature):
            raise NumericalError(
                f"non-finite curvature in solve {label!r}; increase damping",
                {"iteration": str(iterations)},
            )
        if curvature <= 0.0:
            breakdown = True
            logger.warning(
                "Non-positive curvature in CG",
                label=label,
                iteration=iterations,
                damping=op.damping,
            )
            break
        alpha = rs / curvature
        x = x + alpha * direction
        r = r - alpha * op_direction
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                f"non-finite CG iterate in solve {label!r}; increase damping",
                {"iteration": str(iterations)},
            )
        residual = float(np.linalg.norm(r)) / rhs_norm
        if residual < best_residual:
            best_x, best_residual = x.copy(), residual
        trace.append(best_residual)
        if residual <= tol:
            break
        rs_next = float(r @ r)
        direction = r + (rs_next / rs) * direction
        rs = rs_next

    converged = not breakdown and best_residual <= tol
    if not converged:
        logger.warning(
            "CG did not converge",
            label=label,
            iterations=iterations,
            residual=best_residual,
            tol=tol,
        )
    return SolveReport(
        solution=best_x,
        residual=best_residual,
        iterations=iterations,
        converged=converged,
        damping=op.damping,
        tol=tol,
        residual_trace=tuple(trace),
        breakdown=breakdown,
        label=label,
    )


def _failed(report: SolveReport) -> bool:
    return report.breakdown or not report.converged


# ============================================================================
# Influence context
# ============================================================================


@dataclass(eq=False)
class InfluenceContext:
    """
    Everything the influence formulas share for one (graph, θ̂) pair.

    Holds the base forward pass, the HVP operator and a thread-safe cache
    of clean-node solutions s_v = H⁻¹∇L(v, θ̂).
    """

    graph: Graph
    adjacency: NormalizedAdjacency
    theta: np.ndarray
    layout: ParamLayout
    l2_reg: float
    solver: SolverConfig
    operator: HvpOperator
    workers: Optional[int] = None
    _clean_solutions: Dict[int, SolveReport] = field(default_factory=dict, repr=False)
    _train_sum_gradient: Optional[np.ndarray] = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def cache(self) -> ForwardCache:
        return self.operator.cache

    @property
    def train_nodes(self) -> np.ndarray:
        return self.graph.masks.train

    @property
    def n_train(self) -> int:
        return int(self.train_nodes.size)

    @property
    def probs(self) -> np.ndarray:
        return self.cache.probs

    def node_gradient(self, node: int, label: Optional[int] = None) -> np.ndarray:
        """∇L(node, θ̂) on the base graph, loss part only."""
        labels = self.graph.labels
        if label is not None:
            labels = labels.copy()
            labels[node] = label
        targets = label_targets(labels, [node], self.layout.n_classes)
        return backprop(self.cache, self.theta, self.layout, targets)

    def train_sum_gradient(self) -> np.ndarray:
        """∇Σ_{k∈V_train} L_k(G) at θ̂."""
        with self._lock:
            if self._train_sum_gradient is None:
                targets = label_targets(
                    self.graph.labels, self.train_nodes, self.layout.n_classes, normalizer=1.0
                )
                self._train_sum_gradient = backprop(self.cache, self.theta, self.layout, targets)
            return self._train_sum_gradient

    def solve(self, rhs: np.ndarray, label: str = "") -> SolveReport:
        return inverse_hvp(
            self.operator,
            rhs,
            tol=self.solver.tol,
            max_iters=self.solver.max_iters,
            label=label,
        )

    @property
    def damping(self) -> float:
        return self.operator.damping

    def escalate_damping(self) -> Optional[float]:
        """
        Move the operator to the next damping level and drop cached solves.

        Returns:
            Optional[float]: The new damping, or None when it would exceed
            ``solver.max_damping``.
        """
        previous = self.operator.damping
        proposed = max(previous * self.solver.damping_growth, MIN_ESCALATED_DAMPING)
        if proposed > self.solver.max_damping:
            return None
        with self._lock:
            self.operator = replace(self.operator, damping=proposed)
            self._clean_solutions.clear()
        logger.warning("Escalating damping", previous=previous, damping=proposed)
        return proposed

    def clean_solutions(self, nodes: Iterable[int]) -> List[SolveReport]:
        """s_v for each node, solving only the ones not cached yet."""
        nodes = [int(v) for v in nodes]
        with self._lock:
            missing = [v for v in nodes if v not in self._clean_solutions]
        if missing:
            reports = parallel_map(
                lambda v: self.solve(self.node_gradient(v), label=f"clean:{v}"),
                missing,
                self.workers,
            )
            with self._lock:
                self._clean_solutions.update(zip(missing, reports))
        with self._lock:
            return [self._clean_solutions[v] for v in nodes]


def build_context(
    graph: Graph,
    theta: np.ndarray,
    cfg: GcnConfig,
    solver: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> InfluenceContext:
    """
    Bind the influence machinery to a trained model.

    Args:
        graph: Graph the model was trained on (observed labels).
        theta: Trained parameters θ̂.
        cfg: Model configuration (shapes and λ_reg).
        solver: CG and damping settings (defaults from settings).
        workers: Thread cap for per-node maps.
    """
    solver = solver or SolverConfig()
    layout = ParamLayout.from_config(cfg)
    adjacency = normalize(graph)
    operator = build_operator(
        graph,
        theta,
        layout,
        l2_reg=cfg.l2_reg,
        damping=solver.damping,
        backend=solver.backend,
        adjacency=adjacency,
    )
    return InfluenceContext(
        graph=graph,
        adjacency=adjacency,
        theta=np.asarray(theta, dtype=np.float64),
        layout=layout,
        l2_reg=cfg.l2_reg,
        solver=solver,
        operator=operator,
        workers=workers,
    )


# ============================================================================
# Removal gradients
# ============================================================================


def _check_train(ctx: InfluenceContext, nodes: Iterable[int]) -> np.ndarray:
    nodes = np.asarray(list(nodes), dtype=np.int64)
    outside = np.setdiff1d(nodes, ctx.train_nodes)
    if outside.size:
        raise ValidationError(f"nodes {outside.tolist()} are not in the training mask")
    return nodes


def group_removal_gradient(ctx: InfluenceContext, nodes: Iterable[int]) -> np.ndarray:
    """
    ∇Σ_{k∈V_train} L_k(G) - ∇Σ_{k∈V_train∖S} L_k(G_{-S}).

    G_{-S} isolates every node of S and is renormalized. For a single node
    this is the bracket of the node-removal influence with k = z excluded
    from the structural sum.
    """
    removed = _check_train(ctx, nodes)
    graph = ctx.graph
    perturbed = isolate_nodes(graph, removed)
    if perturbed is graph and removed.size == 1:
        # No incident edges: the structural term vanishes
        return ctx.node_gradient(int(removed[0]))

    adjacency = normalize(perturbed) if perturbed is not graph else ctx.adjacency
    cache = forward(adjacency, graph.features, ctx.theta, ctx.layout)
    remaining = np.setdiff1d(ctx.train_nodes, removed)
    targets = label_targets(graph.labels, remaining, ctx.layout.n_classes, normalizer=1.0)
    return ctx.train_sum_gradient() - backprop(cache, ctx.theta, ctx.layout, targets)


def removal_gradient(ctx: InfluenceContext, node: int) -> np.ndarray:
    """
    g_z = ∇L(z; G) - Σ_{k∈V_train∖{z}} [∇L_k(G_{-z}) - ∇L_k(G)].

    Computed as a difference of two summed-loss gradients, one backward
    pass each. An isolated z returns ∇L(z; G) exactly.
    """
    return group_removal_gradient(ctx, [node])


# ============================================================================
# Influence vectors
# ============================================================================


def _solve_or_raise(ctx: InfluenceContext, rhs: np.ndarray, label: str) -> np.ndarray:
    report = ctx.solve(rhs, label=label)
    if report.breakdown:
        raise NumericalError(
            f"influence solve {label!r} hit non-positive curvature; increase damping",
            {"damping": str(report.damping)},
        )
    return report.solution


def node_influence(ctx: InfluenceContext, node: int, n: Optional[int] = None) -> np.ndarray:
    """
    I(-z) = (1/n)·H⁻¹·g_z.

    Args:
        ctx: Influence context.
        node: Training node z.
        n: Normalizer; defaults to |V_train|.
    """
    n = n or ctx.n_train
    return _solve_or_raise(ctx, removal_gradient(ctx, node), f"node:{node}") / n


def edge_influence(ctx: InfluenceContext, u: int, v: int) -> np.ndarray:
    """
    I(-e) = -(1/n)·H⁻¹·[∇ΣL_train(G_{-e}) - ∇ΣL_train(G)] with G_{-e} renormalized.

    Raises:
        ValidationError: The edge does not exist.
    """
    graph = ctx.graph
    perturbed = perturb(graph, Perturbation.remove_edge(u, v))
    cache = forward(normalize(perturbed), graph.features, ctx.theta, ctx.layout)
    targets = label_targets(graph.labels, ctx.train_nodes, ctx.layout.n_classes, normalizer=1.0)
    difference = backprop(cache, ctx.theta, ctx.layout, targets) - ctx.train_sum_gradient()
    return -_solve_or_raise(ctx, difference, f"edge:{u}-{v}") / ctx.n_train


def loss_part_influence(ctx: InfluenceContext, node: int) -> np.ndarray:
    """(1/n)·H⁻¹·∇L(z, θ̂), the influence without graph-structure terms."""
    _check_train(ctx, [node])
    return _solve_or_raise(ctx, ctx.node_gradient(node), f"loss:{node}") / ctx.n_train


def relabelled_loss_gradient(
    ctx: InfluenceContext, node: int, new_label: int, mode: RelabelMode = RelabelMode.HARD
) -> np.ndarray:
    """
    ∇L(z_δ, θ̂) for a relabelled node.

    HARD uses the cross-entropy of ``new_label``. PHI uses the down-weighted
    loss -φ(θ)·log f_{y*} = -log(1 - f_m), with φ a function of θ.
    """
    if mode == RelabelMode.HARD:
        return ctx.node_gradient(node, label=new_label)
    probs = ctx.probs[node]
    old = int(ctx.graph.labels[node])
    f_m = probs[old]
    if f_m >= 1.0:
        raise NumericalError(f"f(z)_m = 1 at node {node}; φ-relabel loss is undefined")
    grad_m = np.zeros_like(ctx.probs)
    unit = np.zeros(ctx.layout.n_classes)
    unit[old] = 1.0
    grad_m[node] = f_m / (1.0 - f_m) * (unit - probs)
    return backprop_logits(ctx.cache, ctx.theta, ctx.layout, grad_m)


def relabel_influence(
    ctx: InfluenceContext,
    node: int,
    new_label: int,
    mode: RelabelMode = RelabelMode.HARD,
    clean_nodes: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    I(z→z_δ) = (1/n)·H⁻¹·(∇L(z) - ∇L(z_δ)) and its per-clean-node values.

    The graph is unchanged by relabelling, so only the two loss gradients
    of z differ. Per-node values reuse the cached s_v.

    Returns:
        Tuple of the parameter influence and I_up(z→z_δ, v) for each v.
    """
    _check_train(ctx, [node])
    if new_label == int(ctx.graph.labels[node]) and mode == RelabelMode.HARD:
        clean = ctx.graph.masks.clean if clean_nodes is None else clean_nodes
        return np.zeros(ctx.layout.size), np.zeros(len(clean))

    difference = ctx.node_gradient(node) - relabelled_loss_gradient(ctx, node, new_label, mode)
    vector = _solve_or_raise(ctx, difference, f"relabel:{node}") / ctx.n_train
    clean = ctx.graph.masks.clean if clean_nodes is None else np.asarray(clean_nodes)
    solutions = ctx.clean_solutions(clean)
    per_node = np.array([report.solution @ difference for report in solutions]) / ctx.n_train
    return vector, per_node


def loss_part_iup(
    ctx: InfluenceContext, node: int, clean_nodes: Optional[Sequence[int]] = None
) -> np.ndarray:
    """I_up computed from the loss-part influence: (1/n)·s_v·∇L(z, θ̂) per clean v."""
    _check_train(ctx, [node])
    clean = ctx.graph.masks.clean if clean_nodes is None else np.asarray(clean_nodes)
    gradient = ctx.node_gradient(node)
    solutions = ctx.clean_solutions(clean)
    return np.array([report.solution @ gradient for report in solutions]) / ctx.n_train


# ============================================================================
# Influence table
# ============================================================================


def _table_entries(
    ctx: InfluenceContext,
    removal: np.ndarray,
    rows: np.ndarray,
    clean: np.ndarray,
    order: str,
) -> Tuple[List[SolveReport], np.ndarray]:
    if order == "transposed":
        reports = ctx.clean_solutions(clean)
        solutions = np.column_stack([report.solution for report in reports])
        return reports, removal @ solutions / ctx.n_train
    reports = parallel_map(
        lambda item: ctx.solve(item[1], label=f"node:{item[0]}"),
        list(zip(rows.tolist(), removal)),
        ctx.workers,
    )
    clean_gradients = np.column_stack([ctx.node_gradient(v) for v in clean])
    influences = np.vstack([report.solution for report in reports]) if reports else removal
    return reports, influences @ clean_gradients / ctx.n_train


def iup_table(
    ctx: InfluenceContext,
    clean_nodes: Optional[Sequence[int]] = None,
    train_nodes: Optional[Sequence[int]] = None,
    order: str = "transposed",
) -> InfluenceTable:
    """
    I_up(-z, v) = ∇L(v, θ̂)ᵀ·I(-z) for every training z and clean v.

    The transposed order solves s_v = H⁻¹∇L(v) once per clean node and
    takes I_up(-z, v) = (1/n)·s_v·g_z; the direct order solves once per
    training node. Both give the same table since H is symmetric.

    When a solve breaks down or misses the tolerance, the whole table is
    rebuilt at the next damping level (see ``InfluenceContext.escalate_damping``)
    until it succeeds or ``solver.max_damping`` is reached. Each SolveReport
    carries the damping it ran at.

    Args:
        ctx: Influence context.
        clean_nodes: Columns (defaults to D_c).
        train_nodes: Rows (defaults to V_train).
        order: ``"transposed"`` or ``"direct"``.

    Returns:
        InfluenceTable: Marked invalid when a solve still fails at the cap.

    Raises:
        ValidationError: Empty clean set or unknown order.
    """
    clean = ctx.graph.masks.clean if clean_nodes is None else np.asarray(clean_nodes, dtype=np.int64)
    rows = ctx.train_nodes if train_nodes is None else _check_train(ctx, train_nodes)
    if not clean.size:
        raise ValidationError("clean set D_c is empty")
    if order not in ("transposed", "direct"):
        raise ValidationError(f"unknown solve order {order!r}")

    removal = np.vstack(
        parallel_map(lambda z: removal_gradient(ctx, z), list(rows), ctx.workers)
    ) if rows.size else np.zeros((0, ctx.layout.size))

    while True:
        reports, iup = _table_entries(ctx, removal, rows, clean, order)
        n_failed = sum(map(_failed, reports))
        if not n_failed:
            break
        logger.warning("Influence table has failed solves", n_failed=n_failed, damping=ctx.damping)
        if ctx.escalate_damping() is None:
            break

    valid = not n_failed
    if not valid:
        logger.error("Influence table has failed solves at the damping cap", n_failed=n_failed)
    logger.info(
        "Built influence table",
        order=order,
        n_rows=int(rows.size),
        n_clean=int(clean.size),
        n_solves=len(reports),
        valid=valid,
        damping=ctx.damping,
    )
    return InfluenceTable(
        train_nodes=rows,
        clean_nodes=clean,
        iup=iup,
        n_train=ctx.n_train,
        valid=valid,
        solve_reports=tuple(reports),
    )


# ============================================================================
# Serialization
# ============================================================================


def write_influence_table(
    table: InfluenceTable, iup_path: PathLike, aggregate_path: PathLike
) -> Tuple[Path, Path]:
    """Write ``z,v,iup`` (long form) and ``z,icv,neg_fraction`` CSVs."""
    iup_path, aggregate_path = Path(iup_path), Path(aggregate_path)
    for path in (iup_path, aggregate_path):
        path.parent.mkdir(parents=True, exist_ok=True)
    n_rows, n_cols = table.iup.shape
    long_form = pd.DataFrame(
        {
            "z": np.repeat(table.train_nodes, n_cols),
            "v": np.tile(table.clean_nodes, n_rows),
            "iup": table.iup.ravel(),
        }
    )
    long_form.to_csv(iup_path, index=False, float_format="%.17g", lineterminator="\n")
    aggregates = pd.DataFrame(
        {"z": table.train_nodes, "icv": table.icv, "neg_fraction": table.neg_fraction}
    )
    aggregates.to_csv(aggregate_path, index=False, float_format="%.17g", lineterminator="\n")
    return iup_path, aggregate_path


def read_influence_table(iup_path: PathLike, n_train: Optional[int] = None) -> InfluenceTable:
    """Rebuild a table from its long-form CSV; aggregates are recomputed."""
    frame = pd.read_csv(iup_path, float_precision="round_trip")
    pivot = frame.pivot(index="z", columns="v", values="iup").sort_index().sort_index(axis=1)
    train_nodes = pivot.index.to_numpy(dtype=np.int64)
    return InfluenceTable(
        train_nodes=train_nodes,
        clean_nodes=pivot.columns.to_numpy(dtype=np.int64),
        iup=pivot.to_numpy(dtype=np.float64),
        n_train=n_train if n_train is not None else int(train_nodes.size),
    )


def write_solve_reports(reports: Sequence[SolveReport], path: PathLike) -> Path:
    """Write solver diagnostics, one row per solve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            {
                "label": report.label,
                "iterations": report.iterations,
                "residual": report.residual,
                "converged": report.converged,
                "breakdown": report.breakdown,
                "damping": report.damping,
                "tol": report.tol,
            }
            for report in reports
        ],
        columns=["label", "iterations", "residual", "converged", "breakdown", "damping", "tol"],
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
