"""
Export script for block-model fixtures.

This script writes, under ``fixtures/`` (or the directory given as the
first argument):
- sbm24: a 24-node, K=3 graph with 30% SLN training labels
- sbm120: a 120-node, K=3 graph with 30% SLN training labels

Each directory holds the CSV graph format plus ``ledger.csv``, the layout of
the pinned copies under ``tests/fixtures/``. Those copies are data, not
script output: generator streams may change across numpy releases, and the
acceptance thresholds are stated against the committed files. Use this
script to make new fixtures of the same shape, then review and commit them.
"""

import sys
from pathlib import Path

from deglif.schemas.config import NoiseSpec, SbmSpec, SplitFractions
from deglif.services import graph_service, noise_service
from deglif.utils.logging import configure_logging, get_logger

logger = get_logger(__name__)

FIXTURES = {
    "sbm24": (
        SbmSpec(
            n_per_class=8,
            n_classes=3,
            p_in=0.4,
            p_out=0.03,
            feature_dim=6,
            split=SplitFractions(train=0.5, validation=0.25, test=0.25),
            clean_size=4,
        ),
        3,
    ),
    "sbm120": (
        SbmSpec(
            n_per_class=40,
            n_classes=3,
            p_in=0.2,
            p_out=0.02,
            feature_dim=6,
            clean_size=12,
        ),
        7,
    ),
}

NOISE_LEVEL = 0.3
NOISE_SEED = 1


def freeze_fixtures(root: Path) -> None:
    """Generate, corrupt and save every fixture."""
    for name, (spec, graph_seed) in FIXTURES.items():
        graph = graph_service.generate_sbm(spec, graph_seed)
        transition = noise_service.build_transition(
            NoiseSpec(level=NOISE_LEVEL, n_classes=graph.n_classes)
        )
        noisy, ledger = noise_service.inject(graph, transition, NOISE_SEED)
        directory = graph_service.save_graph(noisy, root / name)
        noise_service.write_ledger(ledger, directory / "ledger.csv")
        logger.info(
            "Fixture frozen",
            fixture=name,
            nodes=noisy.n_nodes,
            edges=noisy.n_edges,
            flipped=ledger.n_flipped,
        )


if __name__ == "__main__":
    configure_logging()
    freeze_fixtures(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("fixtures"))
