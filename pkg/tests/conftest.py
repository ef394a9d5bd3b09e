"""
Pytest configuration and fixtures.
"""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from deglif.core.config import get_settings
from deglif.models import Graph, RoleMasks
from deglif.schemas.config import GcnConfig, SbmSpec, SplitFractions
from deglif.services.gcn_service import ParamLayout
from deglif.services.graph_service import normalize


FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch: pytest.MonkeyPatch):
    """Isolate tests from the caller's DEGLIF_* environment."""
    for name in (
        "DEGLIF_THREADS",
        "DEGLIF_DAMPING",
        "DEGLIF_MAX_DAMPING",
        "DEGLIF_DAMPING_GROWTH",
        "DEGLIF_CG_TOL",
        "DEGLIF_CG_MAX_ITERS",
        "DEGLIF_ORACLE_MAX_NODES",
        "DEGLIF_HVP_BACKEND",
    ):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def tiny_dir() -> Path:
    """Committed six-node CSV fixture (K=2, one reversed duplicate edge)."""
    return FIXTURES_DIR / "tiny"


@pytest.fixture
def frozen_dir() -> Callable[[str], Path]:
    """Committed block-model fixtures: noisy labels plus ``ledger.csv``."""
    return lambda name: FIXTURES_DIR / name


@pytest.fixture
def make_graph() -> Callable[..., Graph]:
    """Factory for small random graphs with all four roles populated."""

    def _make(
        n_nodes: int = 12,
        n_classes: int = 3,
        feature_dim: int = 4,
        edge_prob: float = 0.3,
        seed: int = 0,
        n_clean: int = 2,
    ) -> Graph:
        rng = np.random.default_rng(seed)
        rows, cols = np.triu_indices(n_nodes, k=1)
        keep = rng.random(rows.size) < edge_prob
        n_train = n_nodes // 2
        n_val = max(n_clean, n_nodes // 4)
        order = np.arange(n_nodes)
        masks = RoleMasks.from_lists(
            train=order[:n_train],
            validation=order[n_train:n_train + n_val],
            test=order[n_train + n_val:],
            clean=order[n_train:n_train + n_clean],
        )
        return Graph(
            n_nodes=n_nodes,
            edges=np.stack([rows[keep], cols[keep]], axis=1),
            features=rng.normal(size=(n_nodes, feature_dim)),
            labels=rng.integers(0, n_classes, size=n_nodes),
            n_classes=n_classes,
            masks=masks,
        )

    return _make


@pytest.fixture
def smooth_theta() -> Callable[..., np.ndarray]:
    """
    Random parameters with every hidden pre-activation kept away from 0.

    Each b1 entry is picked from a grid on [-0.3, 0.3] to maximize the
    smallest |Z1| in its column, so finite differences never cross a
    ReLU kink.
    """

    def _smooth(graph: Graph, layout: ParamLayout, seed: int = 0, scale: float = 0.5) -> np.ndarray:
        rng = np.random.default_rng(seed)
        theta = rng.normal(scale=scale, size=layout.size)
        w1, b1, _, _ = layout.unpack(theta)
        pre = normalize(graph) @ graph.features @ w1
        candidates = np.linspace(-0.3, 0.3, 61)
        for j in range(layout.hidden_dim):
            margins = [np.min(np.abs(pre[:, j] + c)) for c in candidates]
            b1[j] = candidates[int(np.argmax(margins))]
        return theta

    return _smooth


@pytest.fixture
def gcn_config() -> Callable[..., GcnConfig]:
    """Model config bound to a graph's shapes."""

    def _config(graph: Graph, hidden_dim: int = 4, epochs: int = 200, init_seed: int = 0,
                learning_rate: float = 0.5, l2_reg: float = 5e-4, grad_tol: float = 0.0) -> GcnConfig:
        return GcnConfig(
            input_dim=graph.feature_dim,
            n_classes=graph.n_classes,
            hidden_dim=hidden_dim,
            epochs=epochs,
            init_seed=init_seed,
            learning_rate=learning_rate,
            l2_reg=l2_reg,
            grad_tol=grad_tol,
        )

    return _config


@pytest.fixture
def small_sbm() -> SbmSpec:
    """24-node, K=3 stochastic block model with four clean nodes."""
    return SbmSpec(
        n_per_class=8,
        n_classes=3,
        p_in=0.4,
        p_out=0.03,
        feature_dim=6,
        feature_noise_sigma=0.5,
        split=SplitFractions(train=0.5, validation=0.25, test=0.25),
        clean_size=4,
    )


def _relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-12) -> float:
    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), floor))


@pytest.fixture
def relative_error() -> Callable[..., float]:
    """Norm-wise relative error ‖a - e‖/‖e‖."""
    return _relative_error
