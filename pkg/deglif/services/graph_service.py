"""
Graph service: ingestion, normalization, perturbation and generation.

This module provides:
- Loading and saving the three-file CSV/JSON graph format
- Symmetric normalization with self-loops (the GCN propagation matrix)
- Structural perturbations (node isolation, edge removal)
- A seeded stochastic block model generator for desk-scale experiments
"""

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from deglif.core.errors import GraphFormatError, ValidationError
from deglif.models import Graph, NormalizedAdjacency, Perturbation, PerturbationKind, RoleMasks
from deglif.schemas.config import SbmSpec
from deglif.utils.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

NODES_FILE = "nodes.csv"
EDGES_FILE = "edges.csv"
SPLITS_FILE = "splits.json"


class SplitsFile(BaseModel):
    """Schema of ``splits.json``."""
    train: List[int]
    validation: List[int]
    test: List[int]
    clean: List[int]
    n_classes: Optional[int] = None


# ============================================================================
# Loading and saving
# ============================================================================


def _read_splits(path: Path) -> SplitsFile:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(str(path), exc.lineno, f"invalid JSON: {exc.msg}") from exc
    try:
        return SplitsFile.model_validate(payload)
    except PydanticValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(loc) for loc in first["loc"])
        raise GraphFormatError(str(path), None, f"{field}: {first['msg']}") from exc


def _read_nodes(
    path: Path, n_classes: Optional[int]
) -> Tuple[List[str], List[int], List[List[float]], List[int]]:
    ids: List[str] = []
    labels: List[int] = []
    features: List[List[float]] = []
    label_lines: List[int] = []
    seen: Dict[str, int] = {}

    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise GraphFormatError(str(path), 1, "empty file")
        header = [column.strip() for column in header]
        if header[:2] != ["id", "label"]:
            raise GraphFormatError(str(path), 1, "header must start with 'id,label'")
        n_features = len(header) - 2
        if n_features < 1:
            raise GraphFormatError(str(path), 1, "at least one feature column is required")

        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise GraphFormatError(
                    str(path), line, f"expected {len(header)} fields, found {len(row)}"
                )
            node_id = row[0].strip()
            if not node_id:
                raise GraphFormatError(str(path), line, "empty node id")
            if node_id in seen:
                raise GraphFormatError(
                    str(path), line, f"duplicate node id {node_id!r} (first on line {seen[node_id]})"
                )
            try:
                label = int(row[1])
            except ValueError:
                raise GraphFormatError(str(path), line, f"label {row[1]!r} is not an integer")
            if label < 0 or (n_classes is not None and label >= n_classes):
                bound = n_classes if n_classes is not None else "K"
                raise GraphFormatError(str(path), line, f"label {label} out of range [0, {bound})")
            try:
                values = [float(cell) for cell in row[2:]]
            except ValueError:
                raise GraphFormatError(str(path), line, "non-numeric feature value")
            if not all(math.isfinite(value) for value in values):
                raise GraphFormatError(str(path), line, "non-finite feature value")

            seen[node_id] = line
            ids.append(node_id)
            labels.append(label)
            features.append(values)
            label_lines.append(line)

    if not ids:
        raise GraphFormatError(str(path), None, "no node rows")
    return ids, labels, features, label_lines


def _read_edges(path: Path, index: Dict[str, int]) -> List[Tuple[int, int]]:
    pairs: List[Tuple[int, int]] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [column.strip() for column in header] != ["src", "dst"]:
            raise GraphFormatError(str(path), 1, "header must be 'src,dst'")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise GraphFormatError(str(path), line, f"expected 2 fields, found {len(row)}")
            src, dst = row[0].strip(), row[1].strip()
            for endpoint in (src, dst):
                if endpoint not in index:
                    raise GraphFormatError(
                        str(path), line, f"edge endpoint {endpoint!r} out of range (unknown node id)"
                    )
            u, v = index[src], index[dst]
            if u == v:
                logger.warning("Skipping self-loop row", file=str(path), line=line, node=src)
                continue
            pairs.append((u, v))
    return pairs


def _map_ids(
    path: Path, name: str, values: Sequence[int], index: Dict[str, int]
) -> List[int]:
    mapped = []
    for value in values:
        key = str(value)
        if key not in index:
            raise GraphFormatError(str(path), None, f"{name} references unknown node id {value}")
        mapped.append(index[key])
    return mapped


def load_graph(dir_path: PathLike) -> Graph:
    """
    Load a graph from ``nodes.csv``, ``edges.csv`` and ``splits.json``.

    Node ids are remapped to 0..n-1 in file order; the original ids are kept
    in ``Graph.node_ids``.

    Args:
        dir_path: Directory holding the three files.

    Returns:
        Graph: The validated graph.

    Raises:
        GraphFormatError: Missing file or malformed content (with file and line).
    """
    root = Path(dir_path)
    paths = {name: root / name for name in (NODES_FILE, EDGES_FILE, SPLITS_FILE)}
    for path in paths.values():
        if not path.is_file():
            raise GraphFormatError(str(path), None, "missing file")

    splits = _read_splits(paths[SPLITS_FILE])
    if splits.n_classes is not None and splits.n_classes < 2:
        raise GraphFormatError(str(paths[SPLITS_FILE]), None, "n_classes must be >= 2")

    ids, labels, features, _ = _read_nodes(paths[NODES_FILE], splits.n_classes)
    index = {node_id: position for position, node_id in enumerate(ids)}
    pairs = _read_edges(paths[EDGES_FILE], index)

    splits_path = paths[SPLITS_FILE]
    masks = RoleMasks.from_lists(
        train=_map_ids(splits_path, "train", splits.train, index),
        validation=_map_ids(splits_path, "validation", splits.validation, index),
        test=_map_ids(splits_path, "test", splits.test, index),
        clean=_map_ids(splits_path, "clean", splits.clean, index),
    )
    try:
        masks.validate(len(ids))
    except ValidationError as exc:
        raise GraphFormatError(str(splits_path), None, exc.message) from exc

    n_classes = splits.n_classes if splits.n_classes is not None else max(max(labels) + 1, 2)
    graph = Graph(
        n_nodes=len(ids),
        edges=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        features=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        n_classes=n_classes,
        masks=masks,
        node_ids=tuple(ids),
    )
    logger.info(
        "Loaded graph",
        path=str(root),
        n_nodes=graph.n_nodes,
        n_edges=graph.n_edges,
        n_classes=graph.n_classes,
    )
    return graph


def _split_value(node_id: str) -> Union[int, str]:
    try:
        return int(node_id)
    except ValueError:
        return node_id


def save_graph(graph: Graph, dir_path: PathLike) -> Path:
    """
    Write a graph in the three-file format using its original node ids.

    Args:
        graph: Graph to write.
        dir_path: Target directory (created if needed).

    Returns:
        Path: The directory written.
    """
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    ids = graph.node_ids

    with (root / NODES_FILE).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{j}" for j in range(graph.feature_dim)])
        for i in range(graph.n_nodes):
            writer.writerow(
                [ids[i], int(graph.labels[i])] + [repr(float(x)) for x in graph.features[i]]
            )

    with (root / EDGES_FILE).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["src", "dst"])
        for u, v in graph.edges:
            writer.writerow([ids[u], ids[v]])

    splits = {
        name: [_split_value(ids[i]) for i in getattr(graph.masks, name)]
        for name in ("train", "validation", "test", "clean")
    }
    splits["n_classes"] = graph.n_classes
    (root / SPLITS_FILE).write_text(json.dumps(splits, indent=2) + "\n", encoding="utf-8")
    return root


# ============================================================================
# Adjacency
# ============================================================================


def adjacency(graph: Graph) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency matrix without self-loops."""
    n = graph.n_nodes
    if not graph.n_edges:
        return sp.csr_matrix((n, n), dtype=np.float64)
    rows = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    cols = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    data = np.ones(rows.size, dtype=np.float64)
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def normalize(graph: Graph) -> NormalizedAdjacency:
    """
    Build the GCN propagation matrix D̃^(-1/2)(A + I)D̃^(-1/2).

    Isolated nodes keep their unit self-loop.

    Args:
        graph: Graph whose edge set is normalized.

    Returns:
        NormalizedAdjacency: CSR matrix with sorted indices.
    """
    n = graph.n_nodes
    a_tilde = adjacency(graph) + sp.identity(n, dtype=np.float64, format="csr")
    degrees = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(degrees))
    a_hat = (d_inv_sqrt @ a_tilde @ d_inv_sqrt).tocsr()
    a_hat.sort_indices()
    return NormalizedAdjacency(matrix=a_hat)


def k_hop_nodes(graph: Graph, seeds: Iterable[int], hops: int) -> np.ndarray:
    """
    Nodes within ``hops`` edges of any seed (seeds included).

    Args:
        graph: Graph to traverse.
        seeds: Starting nodes.
        hops: Number of hops.

    Returns:
        Sorted node index array.
    """
    reach = np.zeros(graph.n_nodes, dtype=bool)
    reach[np.asarray(list(seeds), dtype=np.int64)] = True
    adj = adjacency(graph)
    for _ in range(hops):
        reach = reach | (adj @ reach.astype(np.float64) > 0)
    return np.flatnonzero(reach)


# ============================================================================
# Perturbation
# ============================================================================


def isolate_nodes(graph: Graph, nodes: Iterable[int]) -> Graph:
    """Drop every edge incident to any of ``nodes``; nodes stay in the graph."""
    nodes = np.asarray(list(nodes), dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= graph.n_nodes):
        raise ValidationError("node not present")
    if not graph.n_edges or not nodes.size:
        return graph
    touches = np.isin(graph.edges[:, 0], nodes) | np.isin(graph.edges[:, 1], nodes)
    if not touches.any():
        return graph
    return graph.with_edges(graph.edges[~touches])


def perturb(graph: Graph, perturbation: Perturbation) -> Graph:
    """
    Apply a structural perturbation; features, labels and masks are unchanged.

    Callers re-run :func:`normalize` to obtain the perturbed propagation
    matrix with freshly computed degrees.

    Args:
        graph: Graph to perturb.
        perturbation: Node isolation or single-edge removal.

    Returns:
        Graph: New graph with the modified edge set.

    Raises:
        ValidationError: The referenced node or edge does not exist.
    """
    if perturbation.kind == PerturbationKind.REMOVE_NODE_EDGES:
        return isolate_nodes(graph, perturbation.nodes)

    u, v = perturbation.nodes
    if not graph.has_edge(u, v):
        raise ValidationError(f"edge not present: ({u}, {v})")
    a, b = min(u, v), max(u, v)
    keep = ~((graph.edges[:, 0] == a) & (graph.edges[:, 1] == b))
    return graph.with_edges(graph.edges[keep])


# ============================================================================
# Generation
# ============================================================================


def _split_sizes(n: int, spec: SbmSpec) -> Tuple[int, int, int]:
    n_train = max(1, int(round(spec.split.train * n)))
    n_train = min(n_train, n)
    n_val = min(int(round(spec.split.validation * n)), n - n_train)
    n_test = min(int(round(spec.split.test * n)), n - n_train - n_val)
    return n_train, n_val, n_test


def generate_sbm(spec: SbmSpec, seed: int) -> Graph:
    """
    Generate a stochastic block model graph with class-informative features.

    Nodes of class k connect within class with probability ``p_in`` and
    across classes with ``p_out``. Features are the one-hot class indicator
    in the first K coordinates plus isotropic Gaussian noise. Roles are
    assigned by a seeded permutation; D_c is the head of the validation part.

    Args:
        spec: Validated SBM specification.
        seed: Generator seed; identical seeds give identical graphs.

    Returns:
        Graph: The generated graph.
    """
    rng = np.random.default_rng(seed)
    k = spec.n_classes
    n = spec.n_nodes
    labels = np.repeat(np.arange(k, dtype=np.int64), spec.n_per_class)

    rows, cols = np.triu_indices(n, k=1)
    probability = np.where(labels[rows] == labels[cols], spec.p_in, spec.p_out)
    keep = rng.random(rows.size) < probability
    edges = np.stack([rows[keep], cols[keep]], axis=1)

    features = np.zeros((n, spec.feature_dim), dtype=np.float64)
    features[np.arange(n), labels] = 1.0
    features += spec.feature_noise_sigma * rng.standard_normal((n, spec.feature_dim))

    n_train, n_val, n_test = _split_sizes(n, spec)
    if spec.clean_size > n_val:
        raise ValidationError(
            f"clean_size {spec.clean_size} exceeds validation size {n_val}"
        )
    order = rng.permutation(n)
    validation = order[n_train:n_train + n_val]
    masks = RoleMasks.from_lists(
        train=order[:n_train],
        validation=validation,
        test=order[n_train + n_val:n_train + n_val + n_test],
        clean=validation[:spec.clean_size],
    )
    graph = Graph(
        n_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        n_classes=k,
        masks=masks,
    )
    logger.debug("Generated SBM graph", seed=seed, n_nodes=n, n_edges=graph.n_edges)
    return graph
