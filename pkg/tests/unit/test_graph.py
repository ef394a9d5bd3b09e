"""
Unit tests for the graph service.
"""

import json
import math

import numpy as np
import pytest

from deglif.core.errors import GraphFormatError, ValidationError
from deglif.models import Graph, Perturbation, RoleMasks
from deglif.schemas.config import SbmSpec
from deglif.services.graph_service import (
    adjacency,
    generate_sbm,
    k_hop_nodes,
    load_graph,
    normalize,
    perturb,
    save_graph,
)


def write_graph_files(directory, nodes, edges, splits):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "nodes.csv").write_text(nodes)
    (directory / "edges.csv").write_text(edges)
    (directory / "splits.json").write_text(json.dumps(splits))
    return directory


def bare_graph(n_nodes, edges):
    return Graph(
        n_nodes=n_nodes,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=np.ones((n_nodes, 1)),
        labels=np.zeros(n_nodes, dtype=np.int64),
        n_classes=2,
        masks=RoleMasks.from_lists([], [], [], []),
    )


TWO_NODE_SPLITS = {"train": [0], "validation": [1], "test": [], "clean": [1]}


class TestLoadGraph:
    """Tests for load_graph."""

    def test_minimal_two_node_graph(self, tmp_path):
        """Two nodes, one edge, labels [0, 1]."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,1,2.0\n",
            "src,dst\n0,1\n",
            TWO_NODE_SPLITS,
        )
        graph = load_graph(directory)
        assert graph.n_nodes == 2
        assert graph.edges.tolist() == [[0, 1]]
        assert graph.labels.tolist() == [0, 1]
        assert graph.n_classes == 2

    def test_reversed_duplicate_collapses(self, tmp_path):
        """(0,1) and (1,0) give a single undirected edge."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,1,2.0\n",
            "src,dst\n0,1\n1,0\n",
            TWO_NODE_SPLITS,
        )
        assert load_graph(directory).edges.tolist() == [[0, 1]]

    def test_clean_outside_validation_rejected(self, tmp_path):
        """A clean node outside validation is an error."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,1,2.0\n",
            "src,dst\n0,1\n",
            {"train": [0], "validation": [1], "test": [], "clean": [0]},
        )
        with pytest.raises(GraphFormatError, match="clean ⊄ validation"):
            load_graph(directory)

    def test_committed_fixture_remaps_ids(self, tiny_dir):
        """Original ids 10..15 become 0..5 in file order."""
        graph = load_graph(tiny_dir)
        assert graph.n_nodes == 6
        assert graph.node_ids == ("10", "11", "12", "13", "14", "15")
        assert graph.edges.tolist() == [[0, 1], [0, 4], [1, 2], [2, 3], [3, 5]]
        assert graph.masks.train.tolist() == [0, 1, 2, 3]
        assert graph.masks.clean.tolist() == [4, 5]

    def test_missing_file(self, tmp_path):
        """A missing file names the file."""
        directory = tmp_path / "g"
        directory.mkdir()
        (directory / "nodes.csv").write_text("id,label,f0\n0,0,1.0\n")
        with pytest.raises(GraphFormatError, match="edges.csv"):
            load_graph(directory)

    def test_duplicate_node_id_reports_line(self, tmp_path):
        """Duplicate ids are reported at the second occurrence."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n0,1,2.0\n",
            "src,dst\n",
            TWO_NODE_SPLITS,
        )
        with pytest.raises(GraphFormatError) as excinfo:
            load_graph(directory)
        assert excinfo.value.line == 3
        assert "duplicate node id" in excinfo.value.message

    def test_label_out_of_declared_range(self, tmp_path):
        """Labels at or above the declared K fail with the line."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,2,2.0\n",
            "src,dst\n",
            {**TWO_NODE_SPLITS, "n_classes": 2},
        )
        with pytest.raises(GraphFormatError) as excinfo:
            load_graph(directory)
        assert excinfo.value.line == 3

    def test_unknown_edge_endpoint(self, tmp_path):
        """Edges may only reference known ids."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,1,2.0\n",
            "src,dst\n0,7\n",
            TWO_NODE_SPLITS,
        )
        with pytest.raises(GraphFormatError, match="out of range") as excinfo:
            load_graph(directory)
        assert excinfo.value.line == 2

    def test_malformed_row(self, tmp_path):
        """Rows with the wrong field count are rejected."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0\n",
            "src,dst\n",
            TWO_NODE_SPLITS,
        )
        with pytest.raises(GraphFormatError, match="expected 3 fields"):
            load_graph(directory)

    def test_self_loop_rows_are_skipped(self, tmp_path):
        """Self-loops in edges.csv never enter the edge list."""
        directory = write_graph_files(
            tmp_path / "g",
            "id,label,f0\n0,0,1.0\n1,1,2.0\n",
            "src,dst\n0,0\n0,1\n",
            TWO_NODE_SPLITS,
        )
        assert load_graph(directory).edges.tolist() == [[0, 1]]

    def test_save_then_load_reproduces_graph(self, tmp_path, small_sbm):
        """save_graph writes the format load_graph reads."""
        graph = generate_sbm(small_sbm, seed=3)
        loaded = load_graph(save_graph(graph, tmp_path / "copy"))
        assert np.array_equal(loaded.edges, graph.edges)
        assert np.array_equal(loaded.features, graph.features)
        assert np.array_equal(loaded.labels, graph.labels)
        assert np.array_equal(loaded.masks.clean, graph.masks.clean)
        assert loaded.n_classes == graph.n_classes


class TestNormalize:
    """Tests for normalize."""

    def test_two_connected_nodes(self):
        """Both degrees of A+I are 2."""
        a_hat = normalize(bare_graph(2, [(0, 1)])).toarray()
        assert np.allclose(a_hat, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_single_isolated_node(self):
        """An isolated node keeps its unit self-loop."""
        assert normalize(bare_graph(1, [])).toarray().tolist() == [[1.0]]

    def test_path_graph_entries(self):
        """D̃ = diag(2, 3, 2) on the path 0-1-2."""
        a_hat = normalize(bare_graph(3, [(0, 1), (1, 2)])).toarray()
        assert a_hat[1, 1] == pytest.approx(1.0 / 3.0, abs=1e-15)
        assert a_hat[0, 1] == pytest.approx(1.0 / math.sqrt(6.0), abs=1e-15)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_construction(self, make_graph, seed):
        """Sparse build equals the dense formula and is symmetric."""
        graph = make_graph(n_nodes=30, edge_prob=0.15, seed=seed)
        a_hat = normalize(graph).toarray()
        a_tilde = adjacency(graph).toarray() + np.eye(graph.n_nodes)
        d_inv_sqrt = np.diag(1.0 / np.sqrt(a_tilde.sum(axis=1)))
        dense = d_inv_sqrt @ a_tilde @ d_inv_sqrt
        assert np.max(np.abs(a_hat - a_hat.T)) <= 1e-12
        assert np.allclose(a_hat @ np.ones(graph.n_nodes), dense @ np.ones(graph.n_nodes), atol=1e-12)


class TestPerturb:
    """Tests for perturb."""

    def test_remove_node_edges_on_triangle(self):
        """Isolating node 0 leaves only (1, 2)."""
        graph = bare_graph(3, [(0, 1), (1, 2), (0, 2)])
        perturbed = perturb(graph, Perturbation.remove_node_edges(0))
        assert perturbed.edges.tolist() == [[1, 2]]
        assert perturbed.n_nodes == 3

    def test_remove_only_edge_gives_identity(self):
        """Both endpoints become isolated."""
        perturbed = perturb(bare_graph(2, [(0, 1)]), Perturbation.remove_edge(0, 1))
        assert np.array_equal(normalize(perturbed).toarray(), np.eye(2))

    def test_missing_edge_rejected(self):
        """RemoveEdge on a non-edge fails."""
        with pytest.raises(ValidationError, match="edge not present"):
            perturb(bare_graph(3, [(0, 1), (1, 2)]), Perturbation.remove_edge(0, 2))

    def test_isolated_node_row_is_unit(self, make_graph):
        """After isolation the node's row is its self-loop only."""
        graph = make_graph(seed=4)
        a_hat = normalize(perturb(graph, Perturbation.remove_node_edges(3))).toarray()
        expected = np.zeros(graph.n_nodes)
        expected[3] = 1.0
        assert np.array_equal(a_hat[3], expected)

    def test_order_independence(self, make_graph):
        """perturb then normalize equals normalize of the rebuilt graph."""
        graph = make_graph(n_nodes=20, seed=5)
        perturbed = perturb(graph, Perturbation.remove_node_edges(2))
        keep = ~((graph.edges[:, 0] == 2) | (graph.edges[:, 1] == 2))
        rebuilt = Graph(
            n_nodes=graph.n_nodes,
            edges=graph.edges[keep],
            features=graph.features,
            labels=graph.labels,
            n_classes=graph.n_classes,
            masks=graph.masks,
        )
        assert np.array_equal(normalize(perturbed).toarray(), normalize(rebuilt).toarray())

    def test_features_labels_masks_unchanged(self, make_graph):
        graph = make_graph(seed=6)
        u, v = graph.edges[0]
        perturbed = perturb(graph, Perturbation.remove_edge(int(v), int(u)))
        assert perturbed.n_edges == graph.n_edges - 1
        assert perturbed.features is graph.features
        assert perturbed.labels is graph.labels
        assert perturbed.masks is graph.masks


class TestGenerateSbm:
    """Tests for generate_sbm."""

    def test_two_isolated_nodes(self):
        """K=2 with one node per class and p_out=0 has no edges."""
        spec = SbmSpec(n_per_class=1, n_classes=2, p_in=0.5, p_out=0.0, feature_dim=2)
        graph = generate_sbm(spec, seed=0)
        assert graph.n_nodes == 2
        assert graph.n_edges == 0

    def test_deterministic(self, small_sbm):
        """Same seed, identical graph."""
        first, second = generate_sbm(small_sbm, 9), generate_sbm(small_sbm, 9)
        assert np.array_equal(first.edges, second.edges)
        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.masks.train, second.masks.train)
        assert np.array_equal(first.masks.clean, second.masks.clean)

    def test_no_cross_class_edges_when_p_out_zero(self):
        """Every edge joins two nodes of the same class."""
        spec = SbmSpec(n_per_class=15, n_classes=3, p_in=0.3, p_out=0.0, feature_dim=3)
        graph = generate_sbm(spec, seed=2)
        assert graph.n_edges > 0
        assert np.all(graph.labels[graph.edges[:, 0]] == graph.labels[graph.edges[:, 1]])

    def test_clean_set_inside_validation(self, small_sbm):
        graph = generate_sbm(small_sbm, seed=1)
        assert graph.masks.clean.size == small_sbm.clean_size
        assert np.all(np.isin(graph.masks.clean, graph.masks.validation))

    def test_invalid_spec_rejected(self):
        """p_in must exceed p_out."""
        with pytest.raises(ValueError):
            SbmSpec(n_per_class=2, n_classes=2, p_in=0.1, p_out=0.2, feature_dim=2)


class TestKHopNodes:
    """Tests for k_hop_nodes."""

    def test_path_reach(self):
        graph = bare_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        assert k_hop_nodes(graph, [0], 2).tolist() == [0, 1, 2]
        assert k_hop_nodes(graph, [2], 1).tolist() == [1, 2, 3]
