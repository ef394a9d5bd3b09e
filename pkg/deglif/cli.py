"""
DeGLIF command-line interface.

Every subcommand takes one experiment JSON file plus flag overrides and
writes its artifacts under the configured output directory, one
``seed_<s>`` directory per seed, each with a ``manifest.json``.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical failure.
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from deglif import __version__
from deglif.core.errors import DeglifError, ValidationError
from deglif.models import CorruptionLedger, Graph, NoisyInstance
from deglif.schemas.config import (
    LAMBDA_GRID,
    MU_GRID,
    DenoiseConfig,
    DetectionMethod,
    ExperimentConfig,
    NoiseModel,
    NoiseOptions,
    NoiseSpec,
    SbmSpec,
    SplitFractions,
)
from deglif.schemas.reports import RunManifest
from deglif.services import (
    denoise_service,
    gcn_service,
    graph_service,
    influence_service,
    noise_service,
    oracle_service,
)
from deglif.utils.hashing import config_hash
from deglif.utils.logging import configure_logging, get_logger
from deglif.utils.parallel import parallel_map, resolve_workers

logger = get_logger(__name__)


# ============================================================================
# Error handling
# ============================================================================


class DeglifGroup(click.Group):
    """Click group mapping library errors to exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except DeglifError as exc:
            logger.error("Command failed", error=exc.code, message=exc.message, **exc.details)
            click.echo(f"{exc.code}: {exc.message}", err=True)
            ctx.exit(exc.exit_code)
        except PydanticValidationError as exc:
            details = "; ".join(
                f"{'.'.join(str(loc) for loc in error['loc'])}: {error['msg']}"
                for error in exc.errors()
            )
            click.echo(f"VALIDATION_ERROR: {details}", err=True)
            ctx.exit(1)
        except json.JSONDecodeError as exc:
            click.echo(f"VALIDATION_ERROR: invalid JSON config: {exc}", err=True)
            ctx.exit(1)
        except OSError as exc:
            logger.error("I/O failure", error=str(exc))
            click.echo(f"IO_ERROR: {exc}", err=True)
            ctx.exit(2)


# ============================================================================
# Configuration and run plumbing
# ============================================================================


def load_experiment(
    config_path: str,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    mu: Optional[float] = None,
    lam: Optional[float] = None,
    noise_level: Optional[float] = None,
    noise_model: Optional[str] = None,
) -> ExperimentConfig:
    """Read an experiment JSON file and apply flag overrides."""
    payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if mu is not None and lam is not None:
        raise ValidationError("--mu and --lambda are mutually exclusive")
    if seed is not None:
        payload["seeds"] = [seed]
    if out is not None:
        payload["output_dir"] = out
    if mu is not None or lam is not None:
        denoise = dict(payload.get("denoise") or {})
        denoise["method"] = DetectionMethod.SUM.value if mu is not None else DetectionMethod.MV.value
        denoise["threshold"] = mu if mu is not None else lam
        payload["denoise"] = denoise
    if noise_level is not None or noise_model is not None:
        noise = dict(payload.get("noise") or {})
        if noise_level is not None:
            noise["level"] = noise_level
        if noise_model is not None:
            noise["model"] = noise_model
        payload["noise"] = noise
    return ExperimentConfig.model_validate(payload)


def base_graph(config: ExperimentConfig):
    if config.dataset_path is not None:
        return graph_service.load_graph(config.dataset_path)
    return graph_service.generate_sbm(config.sbm, config.graph_seed)


def frozen_ledger(config: ExperimentConfig, graph: Graph) -> Optional[CorruptionLedger]:
    """The ``ledger.csv`` shipped next to a loaded dataset, if any."""
    if config.dataset_path is None:
        return None
    path = Path(config.dataset_path) / "ledger.csv"
    if not path.is_file():
        return None
    ledger = noise_service.read_ledger(path)
    out_of_range = ledger.nodes.size and int(ledger.nodes.max()) >= graph.n_nodes
    if out_of_range or not np.array_equal(graph.labels[ledger.nodes], ledger.observed):
        raise ValidationError(f"{path}: observed labels disagree with nodes.csv")
    return ledger


def build_instances(config: ExperimentConfig) -> List[NoisyInstance]:
    """
    One noisy graph per seed; the base graph is shared.

    Without a noise model the loaded labels are used as they are, with the
    dataset's own ledger (if it ships one) as ground truth.
    """
    graph = base_graph(config)
    if config.noise is None:
        ledger = frozen_ledger(config, graph)
        return [NoisyInstance(seed=seed, graph=graph, ledger=ledger) for seed in config.seeds]
    instances = []
    for seed in config.seeds:
        spec = NoiseSpec(model=config.noise.model, level=config.noise.level, n_classes=graph.n_classes)
        noisy, ledger = noise_service.inject(graph, noise_service.build_transition(spec), seed)
        instances.append(NoisyInstance(seed=seed, graph=noisy, ledger=ledger))
    return instances


class StageTimer:
    """Wall-clock seconds per named stage."""

    def __init__(self) -> None:
        self.seconds: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start


def seed_dir(config: ExperimentConfig, seed: int) -> Path:
    path = Path(config.output_dir) / f"seed_{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(
    directory: Path,
    config: ExperimentConfig,
    artifacts: Sequence[Path],
    seed: Optional[int] = None,
    timer: Optional[StageTimer] = None,
) -> Path:
    """Write ``manifest.json``; every artifact must already exist."""
    missing = [str(path) for path in artifacts if not Path(path).exists()]
    if missing:
        raise ValidationError(f"manifest references missing files: {missing}")
    manifest = RunManifest(
        config_hash=config_hash(config.semantic_payload()),
        seed=seed,
        stage_seconds=timer.seconds if timer else {},
        artifacts=[str(path) for path in artifacts],
        library_version=__version__,
    )
    path = directory / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def default_grid(config: ExperimentConfig) -> List[float]:
    if config.grid:
        return list(config.grid)
    return list(LAMBDA_GRID if config.denoise.method == DetectionMethod.MV else MU_GRID)


def _mean_std(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    present = [value for value in values if value is not None]
    if not present:
        return None, None
    return float(np.mean(present)), float(np.std(present))


def _inner_workers(n_jobs: int) -> int:
    return 1 if n_jobs > 1 else resolve_workers()


# ============================================================================
# Shared options
# ============================================================================


def experiment_options(func):
    """Config argument plus the override flags shared by experiment commands."""
    options = [
        click.argument("config_path", type=click.Path(exists=True, dir_okay=False)),
        click.option("--seed", type=int, default=None, help="Run a single seed."),
        click.option("--out", type=str, default=None, help="Output directory."),
        click.option("--mu", type=float, default=None, help="DeGLIF(sum) threshold."),
        click.option("--lambda", "lam", type=float, default=None, help="DeGLIF(mv) threshold."),
        click.option("--noise-level", type=float, default=None, help="Total flip probability."),
        click.option(
            "--noise-model",
            type=click.Choice([model.value for model in NoiseModel]),
            default=None,
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _config_from(params: dict) -> ExperimentConfig:
    return load_experiment(
        params["config_path"],
        seed=params["seed"],
        out=params["out"],
        mu=params["mu"],
        lam=params["lam"],
        noise_level=params["noise_level"],
        noise_model=params["noise_model"],
    )


@click.group(cls=DeglifGroup)
@click.version_option(__version__, prog_name="deglif")
def cli() -> None:
    """Graph label denoising with leave-one-out influence functions."""
    configure_logging()


# ============================================================================
# gen-sbm and inject
# ============================================================================


@cli.command("gen-sbm")
@click.option("--n-per-class", type=int, required=True)
@click.option("--classes", "n_classes", type=int, required=True)
@click.option("--p-in", type=float, required=True)
@click.option("--p-out", type=float, required=True)
@click.option("--feature-dim", type=int, required=True)
@click.option("--sigma", type=float, default=0.5, show_default=True)
@click.option("--train-frac", type=float, default=0.4, show_default=True)
@click.option("--val-frac", type=float, default=0.3, show_default=True)
@click.option("--test-frac", type=float, default=0.3, show_default=True)
@click.option("--clean-size", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=str, required=True, help="Directory to write the graph to.")
def gen_sbm(
    n_per_class, n_classes, p_in, p_out, feature_dim, sigma,
    train_frac, val_frac, test_frac, clean_size, seed, out,
) -> None:
    """Generate a stochastic block model graph in the CSV format."""
    spec = SbmSpec(
        n_per_class=n_per_class,
        n_classes=n_classes,
        p_in=p_in,
        p_out=p_out,
        feature_dim=feature_dim,
        feature_noise_sigma=sigma,
        split=SplitFractions(train=train_frac, validation=val_frac, test=test_frac),
        clean_size=clean_size,
    )
    graph = graph_service.generate_sbm(spec, seed)
    graph_service.save_graph(graph, out)
    click.echo(f"wrote {graph.n_nodes} nodes and {graph.n_edges} edges to {out}")


@cli.command("inject")
@experiment_options
def inject(**params) -> None:
    """Corrupt training labels per seed and write dataset plus ledger."""
    config = _config_from(params)
    graph = base_graph(config)
    options = config.noise or NoiseOptions()
    spec = NoiseSpec(model=options.model, level=options.level, n_classes=graph.n_classes)
    transition = noise_service.build_transition(spec)
    for seed in config.seeds:
        timer = StageTimer()
        directory = seed_dir(config, seed)
        with timer.stage("inject"):
            noisy, ledger = noise_service.inject(graph, transition, seed)
        with timer.stage("write"):
            dataset = graph_service.save_graph(noisy, directory / "dataset")
            ledger_path = noise_service.write_ledger(ledger, directory / "ledger.csv")
        artifacts = [
            dataset / graph_service.NODES_FILE,
            dataset / graph_service.EDGES_FILE,
            dataset / graph_service.SPLITS_FILE,
            ledger_path,
        ]
        write_manifest(directory, config, artifacts, seed=seed, timer=timer)
        click.echo(f"seed {seed}: {ledger.n_flipped}/{ledger.nodes.size} training labels flipped")


# ============================================================================
# run and sweep
# ============================================================================


def _run_seed(config: ExperimentConfig, instance: NoisyInstance, workers: int) -> dict:
    timer = StageTimer()
    directory = seed_dir(config, instance.seed)
    cfg1, cfg2 = denoise_service.bind_models(
        instance.graph, config.model1, config.model2, instance.seed
    )
    with timer.stage("model1_and_influence"):
        scored = denoise_service.score_graph(
            instance.graph, cfg1, solver=config.solver, workers=workers
        )
    with timer.stage("denoise_and_model2"):
        result = denoise_service.finish_pipeline(
            scored, cfg2, config.denoise, ledger=instance.ledger, seed=instance.seed
        )
    with timer.stage("write"):
        report_path = directory / "report.json"
        report_path.write_text(result.report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        iup_path, icv_path = influence_service.write_influence_table(
            result.table, directory / "iup.csv", directory / "icv.csv"
        )
        solves_path = influence_service.write_solve_reports(
            result.table.solve_reports, directory / "solves.csv"
        )
        params_path = gcn_service.write_params(
            result.theta, gcn_service.ParamLayout.from_config(cfg2), directory / "model2_params.csv"
        )
        artifacts = [report_path, iup_path, icv_path, solves_path, params_path]
        if instance.ledger is not None:
            artifacts.append(noise_service.write_ledger(instance.ledger, directory / "ledger.csv"))
    write_manifest(directory, config, artifacts, seed=instance.seed, timer=timer)
    return result.report.metrics.model_dump()


def _write_sweep(config: ExperimentConfig, instances: Sequence[NoisyInstance]) -> Path:
    grid = default_grid(config)
    timer = StageTimer()
    with timer.stage("sweep"):
        result = denoise_service.sweep(
            instances, config.model1, config.model2, config.denoise, grid, solver=config.solver
        )
    out = Path(config.output_dir)
    rows_path = write_csv(pd.DataFrame([row.model_dump() for row in result.rows]), out / "sweep_rows.csv")
    summary_path = write_csv(
        pd.DataFrame([row.model_dump() for row in result.summary]), out / "aggregate.csv"
    )
    result_path = out / "sweep.json"
    result_path.write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
    write_manifest(out, config, [rows_path, summary_path, result_path], timer=timer)
    click.echo(f"selected threshold: {result.selected_threshold}")
    return summary_path


@cli.command("run")
@experiment_options
def run(**params) -> None:
    """Run the denoising pipeline per seed and aggregate test accuracy."""
    config = _config_from(params)
    instances = build_instances(config)
    if config.grid:
        _write_sweep(config, instances)
        return

    inner = _inner_workers(len(instances))

    def attempt(instance: NoisyInstance):
        try:
            return instance.seed, _run_seed(config, instance, inner), None
        except DeglifError as exc:
            logger.error("Seed failed", seed=instance.seed, error=exc.code, message=exc.message)
            return instance.seed, None, exc
        except Exception as exc:
            logger.exception("Seed failed", seed=instance.seed, error=type(exc).__name__)
            wrapped = DeglifError(
                f"{type(exc).__name__}: {exc}", {"exception": type(exc).__name__}
            )
            return instance.seed, None, wrapped

    outcomes = parallel_map(attempt, instances)
    failures = [(seed, exc) for seed, _, exc in outcomes if exc is not None]
    metrics = [m for _, m, _ in outcomes if m is not None]
    if len(failures) == len(outcomes):
        raise failures[0][1]

    test_mean, test_std = _mean_std([m["model2_test_acc"] for m in metrics])
    before, _ = _mean_std([m["noise_frac_before"] for m in metrics])
    after, _ = _mean_std([m["noise_frac_after"] for m in metrics])
    out = Path(config.output_dir)
    aggregate = pd.DataFrame(
        [
            {
                "method": config.denoise.method.value,
                "threshold": config.denoise.threshold,
                "n_seeds": len(metrics),
                "n_failed": len(failures),
                "test_acc_mean": test_mean,
                "test_acc_std": test_std,
                "noise_frac_before_mean": before,
                "noise_frac_after_mean": after,
            }
        ]
    )
    aggregate_path = write_csv(aggregate, out / "aggregate.csv")
    artifacts = [aggregate_path]
    if failures:
        failures_path = out / "failures.json"
        failures_path.write_text(
            json.dumps({str(seed): exc.to_dict() for seed, exc in failures}, indent=2) + "\n",
            encoding="utf-8",
        )
        artifacts.append(failures_path)
    write_manifest(out, config, artifacts)
    click.echo(f"test accuracy {test_mean} ± {test_std} over {len(metrics)} seed(s)")


@cli.command("sweep")
@experiment_options
def sweep(**params) -> None:
    """Sweep the detector threshold grid; select by validation accuracy."""
    config = _config_from(params)
    _write_sweep(config, build_instances(config))


# ============================================================================
# successive and clean-size
# ============================================================================


@cli.command("successive")
@experiment_options
@click.option("--counts", type=int, default=None, help="Number of passes (default: config).")
def successive(counts: Optional[int], **params) -> None:
    """Apply the pipeline repeatedly and record the noise fraction per count."""
    config = _config_from(params)
    instances = build_instances(config)
    if any(instance.ledger is None for instance in instances):
        raise ValidationError(
            "successive application needs a noise model in the config or a dataset ledger.csv"
        )
    inner = _inner_workers(len(instances))

    def one(instance: NoisyInstance):
        cfg1, cfg2 = denoise_service.bind_models(
            instance.graph, config.model1, config.model2, instance.seed
        )
        return denoise_service.successive(
            instance.graph, cfg1, cfg2, config.denoise, instance.ledger,
            counts=counts, solver=config.solver, seed=instance.seed, workers=inner,
        )

    all_series = parallel_map(one, instances)
    frames = []
    for series in all_series:
        directory = seed_dir(config, series.seed)
        frame = pd.DataFrame(
            [record.model_dump() for record in series.records],
            columns=["count", "noise_fraction", "test_acc", "n_flagged", "precision", "recall"],
        ).astype({"noise_fraction": float, "test_acc": float, "precision": float, "recall": float})
        path = write_csv(frame, directory / "successive.csv")
        write_manifest(directory, config, [path], seed=series.seed)
        frames.append(frame)

    means = pd.concat(frames).groupby("count", as_index=False)[["noise_fraction", "test_acc"]].mean()
    out = Path(config.output_dir)
    mean_path = write_csv(means, out / "successive_mean.csv")
    write_manifest(out, config, [mean_path])
    click.echo(means.to_string(index=False))


@cli.command("clean-size")
@experiment_options
@click.option("--sizes", type=str, default=None, help="Comma-separated clean-set sizes.")
def clean_size(sizes: Optional[str], **params) -> None:
    """Model-2 accuracy as a function of the clean-set size."""
    config = _config_from(params)
    if sizes:
        try:
            size_list = [int(value) for value in sizes.split(",")]
        except ValueError:
            raise ValidationError(f"--sizes must be comma-separated integers, got {sizes!r}")
    else:
        size_list = config.clean_sizes or []
    if not size_list:
        raise ValidationError("no clean sizes given (use --sizes or clean_sizes)")

    rows = denoise_service.clean_size_study(
        build_instances(config), config.model1, config.model2, config.denoise,
        size_list, solver=config.solver,
    )
    out = Path(config.output_dir)
    path = write_csv(pd.DataFrame([row.model_dump() for row in rows]), out / "clean_size.csv")
    write_manifest(out, config, [path])
    click.echo(f"wrote {len(rows)} rows to {path}")


# ============================================================================
# oracle
# ============================================================================


@cli.command("oracle")
@experiment_options
@click.option("--force", is_flag=True, default=False, help="Skip the oracle size guard.")
def oracle(force: bool, **params) -> None:
    """Compare influence predictions with brute-force retraining."""
    config = _config_from(params)
    instances = build_instances(config)
    for instance in instances:
        oracle_service.check_scale(instance.graph, force=force)

    for instance in instances:
        timer = StageTimer()
        directory = seed_dir(config, instance.seed)
        cfg1, _ = denoise_service.bind_models(
            instance.graph, config.model1, config.model2, instance.seed
        )
        with timer.stage("baseline"):
            theta, _ = gcn_service.train(instance.graph, cfg1)
            context = influence_service.build_context(
                instance.graph, theta, cfg1, solver=config.solver
            )
        with timer.stage("retrain"):
            report, pairs = oracle_service.influence_vs_retraining(
                instance.graph, cfg1, context, force=force
            )
        agreement_path = oracle_service.write_agreement(report, directory / "agreement.json")
        pairs_path = oracle_service.write_pairs(pairs, directory / "pairs.csv")
        write_manifest(directory, config, [agreement_path, pairs_path], seed=instance.seed, timer=timer)
        click.echo(
            f"seed {instance.seed}: sign agreement {report.sign_agreement:.3f}, "
            f"spearman {report.spearman}"
        )


def main() -> None:
    cli(prog_name="deglif")


if __name__ == "__main__":
    main()
