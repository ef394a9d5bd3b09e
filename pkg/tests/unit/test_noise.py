"""
Unit tests for the noise service.
"""

import math

import numpy as np
import pytest

from deglif.core.errors import ValidationError
from deglif.models import Graph, RoleMasks
from deglif.schemas.config import NoiseModel, NoiseSpec
from deglif.services.graph_service import load_graph
from deglif.services.noise_service import (
    build_transition,
    inject,
    noise_fraction,
    read_ledger,
    restore_labels,
    write_ledger,
)


def labelled_graph(n_train, n_classes, n_other=0, seed=0):
    """Edgeless graph with ``n_train`` training nodes and cycling labels."""
    n = n_train + n_other
    rng = np.random.default_rng(seed)
    return Graph(
        n_nodes=n,
        edges=np.zeros((0, 2), dtype=np.int64),
        features=np.ones((n, 1)),
        labels=rng.permutation(np.arange(n) % n_classes),
        n_classes=n_classes,
        masks=RoleMasks.from_lists(
            train=np.arange(n_train),
            validation=np.arange(n_train, n),
            test=[],
            clean=[],
        ),
    )


def binomial_bound(p, n, sigmas):
    return sigmas * math.sqrt(p * (1.0 - p) / n)


class TestBuildTransition:
    """Tests for build_transition."""

    def test_sln_three_classes(self):
        """Diagonal 0.7, off-diagonal 0.15."""
        q = build_transition(NoiseSpec(model=NoiseModel.SLN, level=0.3, n_classes=3)).q
        assert np.allclose(np.diag(q), 0.7)
        assert np.allclose(q[~np.eye(3, dtype=bool)], 0.15)

    def test_pairwise_three_classes(self):
        """Mass moves to the next class cyclically."""
        q = build_transition(NoiseSpec(model=NoiseModel.PAIRWISE, level=0.2, n_classes=3)).q
        expected = [[0.8, 0.2, 0.0], [0.0, 0.8, 0.2], [0.2, 0.0, 0.8]]
        assert np.allclose(q, expected, atol=1e-15)

    @pytest.mark.parametrize("model", list(NoiseModel))
    @pytest.mark.parametrize("k", [2, 3, 7])
    def test_zero_level_is_identity(self, model, k):
        q = build_transition(NoiseSpec(model=model, level=0.0, n_classes=k)).q
        assert np.array_equal(q, np.eye(k))

    @pytest.mark.parametrize("model", list(NoiseModel))
    @pytest.mark.parametrize("level", [0.05, 0.3, 0.5, 0.9])
    def test_rows_are_stochastic(self, model, level):
        q = build_transition(NoiseSpec(model=model, level=level, n_classes=4)).q
        assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(q >= 0)

    def test_level_must_be_below_one(self):
        with pytest.raises(ValueError):
            NoiseSpec(model=NoiseModel.SLN, level=1.0, n_classes=3)


class TestInject:
    """Tests for inject."""

    def test_zero_level_leaves_labels(self):
        """η=0 records no flips."""
        graph = labelled_graph(50, 3)
        noisy, ledger = inject(graph, build_transition(NoiseSpec(level=0.0, n_classes=3)), seed=4)
        assert ledger.n_flipped == 0
        assert np.array_equal(noisy.labels, graph.labels)

    def test_deterministic(self):
        """Same graph, matrix and seed give identical output."""
        graph = labelled_graph(200, 3)
        q = build_transition(NoiseSpec(level=0.4, n_classes=3))
        first_graph, first_ledger = inject(graph, q, seed=11)
        second_graph, second_ledger = inject(graph, q, seed=11)
        assert np.array_equal(first_graph.labels, second_graph.labels)
        assert np.array_equal(first_ledger.observed, second_ledger.observed)

    def test_only_training_labels_change(self):
        """Validation labels are never resampled."""
        graph = labelled_graph(100, 3, n_other=100)
        noisy, ledger = inject(graph, build_transition(NoiseSpec(level=0.5, n_classes=3)), seed=2)
        others = graph.masks.validation
        assert np.array_equal(noisy.labels[others], graph.labels[others])
        assert np.array_equal(ledger.nodes, graph.masks.train)
        assert np.array_equal(ledger.flipped, ledger.original != ledger.observed)

    def test_sln_flip_never_keeps_the_label_as_a_flip(self):
        """A flipped SLN label always lands on another class."""
        graph = labelled_graph(500, 4)
        _, ledger = inject(graph, build_transition(NoiseSpec(level=0.6, n_classes=4)), seed=8)
        flipped = ledger.flipped
        assert np.all(ledger.observed[flipped] != ledger.original[flipped])

    def test_pairwise_flips_to_next_class(self):
        graph = labelled_graph(500, 3)
        spec = NoiseSpec(model=NoiseModel.PAIRWISE, level=0.4, n_classes=3)
        _, ledger = inject(graph, build_transition(spec), seed=3)
        flipped = ledger.flipped
        assert np.all(ledger.observed[flipped] == (ledger.original[flipped] + 1) % 3)

    def test_class_count_mismatch(self):
        graph = labelled_graph(10, 3)
        with pytest.raises(ValidationError):
            inject(graph, build_transition(NoiseSpec(level=0.1, n_classes=2)), seed=0)

    def test_named_flip_rate(self):
        """SLN η=0.3, K=3, 3000 training nodes, seed 1 lands within 0.3 ± 0.025."""
        graph = labelled_graph(3000, 3)
        _, ledger = inject(graph, build_transition(NoiseSpec(level=0.3, n_classes=3)), seed=1)
        assert abs(ledger.noise_fraction() - 0.3) <= 0.025

    @pytest.mark.parametrize("model", list(NoiseModel))
    @pytest.mark.parametrize("level", [0.1, 0.3, 0.5])
    @pytest.mark.parametrize("k", [2, 3, 7])
    def test_flip_rate_grid(self, model, level, k):
        """Observed flip fraction sits inside a 4σ binomial band."""
        n = 4000
        graph = labelled_graph(n, k, seed=k)
        spec = NoiseSpec(model=model, level=level, n_classes=k)
        _, ledger = inject(graph, build_transition(spec), seed=100 + k)
        assert abs(ledger.noise_fraction() - level) <= binomial_bound(level, n, 4.0)

    @pytest.mark.parametrize("model", list(NoiseModel))
    def test_row_frequencies_match_matrix(self, model):
        """1e5 draws per true class reproduce every entry of Q."""
        k, per_class = 3, 100_000
        graph = labelled_graph(k * per_class, k)
        transition = build_transition(NoiseSpec(model=model, level=0.3, n_classes=k))
        q = transition.q
        _, ledger = inject(graph, transition, seed=5)
        for true_class in range(k):
            rows = ledger.observed[ledger.original == true_class]
            frequencies = np.bincount(rows, minlength=k) / rows.size
            for observed in range(k):
                p = q[true_class, observed]
                bound = binomial_bound(p, rows.size, 4.0) if 0.0 < p < 1.0 else 0.0
                assert abs(frequencies[observed] - p) <= bound


class TestLedger:
    """Tests for ledger bookkeeping and persistence."""

    def test_noise_fraction_after_relabel(self):
        """Restoring the original label removes that node's noise."""
        graph = labelled_graph(400, 3)
        noisy, ledger = inject(graph, build_transition(NoiseSpec(level=0.5, n_classes=3)), seed=9)
        assert noise_fraction(ledger, noisy.labels) == pytest.approx(ledger.noise_fraction())
        repaired = noisy.labels.copy()
        first = int(ledger.nodes[ledger.flipped][0])
        repaired[first] = graph.labels[first]
        expected = (ledger.n_flipped - 1) / ledger.nodes.size
        assert noise_fraction(ledger, repaired) == pytest.approx(expected)

    def test_csv_round_trip(self, tmp_path):
        graph = labelled_graph(60, 3)
        _, ledger = inject(graph, build_transition(NoiseSpec(level=0.3, n_classes=3)), seed=6)
        path = write_ledger(ledger, tmp_path / "ledger.csv")
        assert path.read_text().splitlines()[0] == "node,original,observed,flipped"
        loaded = read_ledger(path)
        assert np.array_equal(loaded.nodes, ledger.nodes)
        assert np.array_equal(loaded.original, ledger.original)
        assert np.array_equal(loaded.observed, ledger.observed)

    def test_inconsistent_flipped_column_rejected(self, tmp_path):
        path = tmp_path / "ledger.csv"
        path.write_text("node,original,observed,flipped\n0,1,1,True\n")
        with pytest.raises(ValidationError, match="flipped column"):
            read_ledger(path)

    def test_restore_labels_undoes_inject(self):
        graph = labelled_graph(50, 4, n_other=5)
        noisy, ledger = inject(graph, build_transition(NoiseSpec(level=0.4, n_classes=4)), seed=2)
        assert np.array_equal(restore_labels(noisy, ledger).labels, graph.labels)


class TestFrozenFixtures:
    """The committed block-model fixtures stay self-consistent."""

    @pytest.mark.parametrize("name, n_nodes", [("sbm24", 24), ("sbm120", 120)])
    def test_ledger_matches_labels(self, frozen_dir, name, n_nodes):
        graph = load_graph(frozen_dir(name))
        ledger = read_ledger(frozen_dir(name) / "ledger.csv")
        assert graph.n_nodes == n_nodes
        assert graph.n_classes == 3
        assert np.array_equal(ledger.nodes, graph.masks.train)
        assert np.array_equal(graph.labels[ledger.nodes], ledger.observed)
        assert 0.0 < noise_fraction(ledger, graph.labels) < 0.5
        clean = restore_labels(graph, ledger)
        assert noise_fraction(ledger, clean.labels) == 0.0
        assert set(clean.labels[graph.masks.clean].tolist()) == {0, 1, 2}
