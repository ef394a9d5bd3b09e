"""
Unit tests for the oracle service.
"""

import json

import numpy as np
import pytest

from deglif.core.config import get_settings
from deglif.core.errors import ScaleGuardError, ValidationError
from deglif.models import Graph, RelabelDecision, RoleMasks
from deglif.schemas.config import RelabelMode, SolverConfig
from deglif.services.gcn_service import train
from deglif.services.influence_service import build_context, iup_table
from deglif.services.oracle_service import (
    check_scale,
    clean_losses,
    compare,
    influence_vs_retraining,
    predicted_deltas,
    read_pairs,
    retrain_relabel,
    retrain_without,
    write_agreement,
    write_pairs,
)


def decision(node, old, new, phi=None):
    return RelabelDecision(node=node, old_label=old, new_label=new, phi=phi, probs=np.zeros(2))


def edgeless_graph(n_nodes):
    return Graph(
        n_nodes=n_nodes,
        edges=np.zeros((0, 2), dtype=np.int64),
        features=np.ones((n_nodes, 2)),
        labels=np.zeros(n_nodes, dtype=np.int64),
        n_classes=2,
        masks=RoleMasks.from_lists([0], [1], [], [1]),
    )


@pytest.fixture
def baseline(make_graph, gcn_config):
    """Graph, config and baseline θ̂ for small retraining runs."""
    graph = make_graph(n_nodes=12, seed=21, n_clean=3)
    cfg = gcn_config(graph, hidden_dim=4, epochs=100)
    theta, _ = train(graph, cfg)
    return graph, cfg, theta


class TestRetrainWithout:
    """Tests for retrain_without."""

    def test_empty_removal_returns_baseline(self, baseline):
        graph, cfg, theta = baseline
        delta = retrain_without(graph, cfg, [], baseline=theta)
        assert np.array_equal(delta.theta, theta)
        assert not delta.node_deltas.any()
        assert delta.aggregate == 0.0

    def test_deterministic(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[0])
        first = retrain_without(graph, cfg, [z], baseline=theta)
        second = retrain_without(graph, cfg, [z], baseline=theta)
        assert np.array_equal(first.theta, second.theta)
        assert np.array_equal(first.node_deltas, second.node_deltas)

    def test_deltas_are_clean_loss_differences(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[1])
        delta = retrain_without(graph, cfg, [z], baseline=theta)
        expected = clean_losses(graph, delta.theta, cfg) - clean_losses(graph, theta, cfg)
        assert np.array_equal(delta.node_deltas, expected)
        assert delta.aggregate == pytest.approx(expected.mean(), abs=1e-10)
        assert np.array_equal(delta.clean_nodes, graph.masks.clean)

    def test_removal_changes_parameters(self, baseline):
        graph, cfg, theta = baseline
        delta = retrain_without(graph, cfg, [int(graph.masks.train[2])], baseline=theta)
        assert not np.array_equal(delta.theta, theta)

    def test_default_baseline_is_trained(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[0])
        implicit = retrain_without(graph, cfg, [z])
        explicit = retrain_without(graph, cfg, [z], baseline=theta)
        assert np.array_equal(implicit.node_deltas, explicit.node_deltas)

    def test_non_training_node_rejected(self, baseline):
        graph, cfg, theta = baseline
        with pytest.raises(ValidationError, match="training mask"):
            retrain_without(graph, cfg, [int(graph.masks.test[0])], baseline=theta)


class TestRetrainRelabel:
    """Tests for retrain_relabel."""

    def test_identical_labels_give_zero_deltas(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[0])
        label = int(graph.labels[z])
        delta = retrain_relabel(graph, cfg, [decision(z, label, label)], baseline=theta)
        assert np.array_equal(delta.theta, theta)
        assert not delta.node_deltas.any()

    def test_unit_phi_matches_hard_mode(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[3])
        old = int(graph.labels[z])
        new = (old + 1) % graph.n_classes
        hard = retrain_relabel(graph, cfg, [decision(z, old, new)], RelabelMode.HARD, baseline=theta)
        soft = retrain_relabel(graph, cfg, [decision(z, old, new, phi=1.0)], RelabelMode.PHI,
                               baseline=theta)
        assert np.array_equal(hard.theta, soft.theta)

    def test_phi_mode_requires_phi(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[0])
        with pytest.raises(ValidationError, match="undefined"):
            retrain_relabel(graph, cfg, [decision(z, 0, 1)], RelabelMode.PHI, baseline=theta)

    def test_fractional_phi_differs_from_hard(self, baseline):
        graph, cfg, theta = baseline
        z = int(graph.masks.train[3])
        old = int(graph.labels[z])
        new = (old + 1) % graph.n_classes
        hard = retrain_relabel(graph, cfg, [decision(z, old, new)], RelabelMode.HARD, baseline=theta)
        soft = retrain_relabel(graph, cfg, [decision(z, old, new, phi=0.3)], RelabelMode.PHI,
                               baseline=theta)
        assert not np.array_equal(hard.theta, soft.theta)


class TestCompare:
    """Tests for compare."""

    def test_identical(self):
        values = [0.3, -0.1, 0.7, -0.4]
        report = compare(values, values)
        assert report.sign_agreement == 1.0
        assert report.spearman == pytest.approx(1.0)
        assert report.n_nodes == 4

    def test_negated(self):
        values = np.array([0.3, -0.1, 0.7, -0.4])
        report = compare(-values, values)
        assert report.sign_agreement == 0.0
        assert report.spearman == pytest.approx(-1.0)

    def test_zero_deltas(self):
        """A zero delta agrees only with a prediction below 1e-9 in magnitude."""
        report = compare([1e-10, 1e-3, 0.5, 0.2], [0.0, 0.0, 0.3, 0.1])
        assert report.sign_agreement == 0.75
        assert report.spearman == pytest.approx(1.0)

    def test_spearman_undefined(self):
        report = compare([0.1, 0.2], [0.0, 0.4])
        assert report.spearman is None

    def test_empty(self):
        report = compare([], [])
        assert report.sign_agreement == 1.0
        assert report.n_nodes == 0

    def test_size_mismatch(self):
        with pytest.raises(ValidationError, match="size mismatch"):
            compare([0.1, 0.2], [0.1])


class TestScaleGuard:
    """Tests for check_scale."""

    def test_refuses_101_nodes(self):
        with pytest.raises(ScaleGuardError, match="--force"):
            check_scale(edgeless_graph(101))

    def test_force_and_limit(self):
        check_scale(edgeless_graph(101), force=True)
        check_scale(edgeless_graph(100))

    def test_limit_from_environment(self, monkeypatch):
        monkeypatch.setenv("DEGLIF_ORACLE_MAX_NODES", "10")
        get_settings.cache_clear()
        with pytest.raises(ScaleGuardError):
            check_scale(edgeless_graph(11))


class TestInfluenceVsRetraining:
    """Tests for the end-to-end comparison."""

    def test_predictions_are_mean_iup(self, baseline):
        graph, cfg, theta = baseline
        ctx = build_context(graph, theta, cfg, SolverConfig(damping=0.5, tol=1e-10))
        table = iup_table(ctx)
        report, pairs = influence_vs_retraining(graph, cfg, ctx, table=table, workers=1)
        assert report.n_nodes == graph.masks.train.size
        assert list(pairs.columns) == ["z", "prediction", "delta"]
        assert np.array_equal(pairs["z"].to_numpy(), graph.masks.train)
        assert np.array_equal(pairs["prediction"].to_numpy(), predicted_deltas(table))
        assert np.allclose(predicted_deltas(table), table.iup.mean(axis=1))

        z = int(graph.masks.train[0])
        expected = retrain_without(graph, cfg, [z], baseline=theta).aggregate
        assert pairs["delta"].iloc[0] == expected

    def test_subset_of_nodes(self, baseline):
        graph, cfg, theta = baseline
        ctx = build_context(graph, theta, cfg, SolverConfig(damping=0.5, tol=1e-10))
        nodes = graph.masks.train[:2]
        report, pairs = influence_vs_retraining(graph, cfg, ctx, nodes=nodes, workers=1)
        assert report.n_nodes == 2
        assert pairs["z"].tolist() == nodes.tolist()

    def test_outputs_round_trip(self, baseline, tmp_path):
        graph, cfg, theta = baseline
        ctx = build_context(graph, theta, cfg, SolverConfig(damping=0.5, tol=1e-10))
        report, pairs = influence_vs_retraining(graph, cfg, ctx, nodes=graph.masks.train[:2],
                                                workers=1)
        loaded = read_pairs(write_pairs(pairs, tmp_path / "pairs.csv"))
        assert np.array_equal(loaded["prediction"].to_numpy(), pairs["prediction"].to_numpy())
        payload = json.loads(write_agreement(report, tmp_path / "agreement.json").read_text())
        assert payload["n_nodes"] == 2
