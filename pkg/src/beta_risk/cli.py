"""
Command-line interface for beta-risk.

Commands generate the synthetic corpus, train and evaluate models, combine
checkpoints into ensembles, run the W2 surrogate sweep and the loss-weight
ablation, export risk maps, and query any JSONL artifact with DuckDB.
"""

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
from pydantic import ValidationError

from . import __version__, analysis, metrics, plotting
from .config import EceConvention, RunConfig, load_run_config
from .errors import BetaRiskError, StructuralError
from .jsonl_processor import (
    analyze_with_duckdb,
    ensure_dir,
    export_to_csv,
    validate_jsonl_schema,
    write_json,
    write_text,
)
from .metrics import PredictionRecord
from .net import ModelState, load_checkpoint
from .synthdata import SPLITS, Corpus, Scene, load_corpus, write_dataset
from .trainer import BEST_CHECKPOINT, fit, predict_dataset

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SAMPLE_FIELDS = ("sample_id", "label", "scene_kind", "seed", "lon", "lat", "split")
SPLIT_CHOICES = click.Choice([*SPLITS, "all"])
SNAPSHOT_FILE = "config.json"


def _describe_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        where = ".".join(str(x) for x in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def exits_on_error(func: Callable) -> Callable:
    """Turn package errors into a message on stderr and a stable exit code."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            click.echo(f"Error: invalid configuration: {_describe_validation(e)}", err=True)
            ctx.exit(2)
        except BetaRiskError as e:
            click.echo(f"Error: {e}", err=True)
            logger.error(f"{ctx.info_name} failed: {e}")
            ctx.exit(e.exit_code)

    return wrapper


def _select(corpus: Corpus, split: str) -> List[Scene]:
    return list(corpus.scenes) if split == "all" else corpus.split(split)


def _check_compatible(state: ModelState, corpus: Corpus) -> None:
    if state.config.num_scales != corpus.spec.num_scales:
        raise StructuralError(
            f"checkpoint expects {state.config.num_scales} scales, "
            f"dataset has {corpus.spec.num_scales}"
        )


def _bind_corpus(run_config: RunConfig, corpus: Corpus) -> RunConfig:
    """Record the dataset actually used and size the model to its scales."""
    model = run_config.model.model_copy(update={"num_scales": corpus.spec.num_scales})
    return run_config.model_copy(update={"data": corpus.spec, "model": model})


def _write_snapshot(run_config: RunConfig, snapshot_file: Path) -> None:
    ensure_dir(snapshot_file.parent)
    write_text(run_config.snapshot(), snapshot_file)


def _snapshot_beside(output_file: str) -> Path:
    """Snapshot path for a single-file output: report.json -> report.config.json."""
    path = Path(output_file)
    return path.with_name(f"{path.stem}.{SNAPSHOT_FILE}")


def _command_config(command: str, corpus: Optional[Corpus] = None, **args: Any) -> RunConfig:
    """Effective parameters of a command that does not train."""
    values: Dict[str, Any] = {"command": command, "args": args}
    if corpus is not None:
        values["data"] = corpus.spec
    return RunConfig(**values)


def feature_collection(
    records: Sequence[PredictionRecord], locations: Dict[int, Tuple[float, float]]
) -> Dict[str, Any]:
    """GeoJSON points, coordinates in (lon, lat) order."""
    features = []
    for r in sorted(records, key=lambda r: r.sample_id):
        if r.sample_id not in locations:
            raise StructuralError(f"sample {r.sample_id} has no location")
        lon, lat = locations[r.sample_id]
        features.append(
            {
                "type": "Feature",
                "id": r.sample_id,
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": {
                    "risk": r.risk,
                    "alpha": r.alpha,
                    "beta": r.beta,
                    "std_dev": r.std_dev,
                    "label": r.label,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level")
def cli(verbose: bool):
    """Beta-distribution crash-risk modelling CLI."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)


@cli.command("gen-data")
@click.option("--out", "output_file", required=True, help="Output dataset JSONL path")
@click.option("--n", "n_samples", type=click.IntRange(min=1), help="Number of scenes")
@click.option("--seed", type=click.IntRange(min=0), help="Corpus seed")
@click.option("--pos-frac", "positive_fraction", type=float, help="Fraction of positive scenes")
@click.option("--hard-frac", "hard_negative_fraction", type=float, help="Share of negatives that are hard")
@click.option("--noise", "noise_level", type=float, help="Additive noise std")
@click.option("--grid-size", type=int, help="Grid side in pixels")
@click.option("--scales", "num_scales", type=int, help="Number of context scales")
@click.option("--config", "config_file", type=click.Path(), help="JSON config file")
@exits_on_error
def gen_data(output_file: str, config_file: Optional[str], **flags: Any):
    """Generate a seeded synthetic scene corpus."""
    run_config = load_run_config(config_file, {"data": flags})
    run_config = run_config.model_copy(
        update={"command": "gen-data", "args": {"output_file": output_file}}
    )
    count = write_dataset(run_config.data, output_file)
    _write_snapshot(run_config, _snapshot_beside(output_file))
    click.echo(f"Wrote {count} samples to {output_file}")


def _train_overrides(**flags: Any) -> Dict[str, Any]:
    return {
        "train": {
            "epochs": flags.get("epochs"),
            "batch_size": flags.get("batch_size"),
            "seed": flags.get("seed"),
            "lr_backbone": flags.get("lr_backbone"),
            "lr_dist_head": flags.get("lr_dist_head"),
            "lr_cls_head": flags.get("lr_cls_head"),
            "loss": {"lambda1": flags.get("lambda1"), "lambda2": flags.get("lambda2")},
        },
        "output_dir": flags.get("output_dir"),
    }


def train_options(func: Callable) -> Callable:
    options = [
        click.option("--data", "data_file", required=True, help="Dataset JSONL file"),
        click.option("--out", "output_dir", required=True, help="Run directory"),
        click.option("--config", "config_file", type=click.Path(), help="JSON config file"),
        click.option("--epochs", type=int, help="Training epochs"),
        click.option("--batch-size", type=int, help="Mini-batch size"),
        click.option("--seed", type=int, help="Training seed"),
        click.option("--lr-backbone", type=float, help="Backbone learning rate"),
        click.option("--lr-dist-head", type=float, help="Distribution head learning rate"),
        click.option("--lr-cls-head", type=float, help="Classification head learning rate"),
        click.option("--lambda1", type=float, help="BCE weight"),
        click.option("--lambda2", type=float, help="W2 surrogate weight"),
        click.option("--progress/--no-progress", default=False, help="Show progress bars"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@cli.command()
@train_options
@exits_on_error
def train(data_file: str, output_dir: str, config_file: Optional[str], progress: bool, **flags: Any):
    """Train one model and keep the best validation checkpoint."""
    run_config = load_run_config(config_file, _train_overrides(output_dir=output_dir, **flags))
    out_dir = Path(output_dir)
    corpus = load_corpus(data_file)
    run_config = _bind_corpus(run_config, corpus)
    run_config = run_config.model_copy(update={"command": "train", "args": {"data_file": data_file}})
    _write_snapshot(run_config, out_dir / SNAPSHOT_FILE)
    model_config = run_config.model
    result = fit(
        corpus.split("train"),
        corpus.split("val"),
        model_config,
        run_config.train,
        run_dir=out_dir,
        data_seed=corpus.spec.seed,
        progress=progress,
    )
    for row in result.history:
        click.echo(
            f"epoch {row.epoch:3d}  loss {row.train_loss:.5f}  val_acc {row.val_accuracy:.4f}"
        )
    click.echo(f"Best checkpoint (epoch {result.best_epoch}) saved to {out_dir / BEST_CHECKPOINT}")


def _predictions(checkpoint: str, corpus: Corpus, split: str) -> List[PredictionRecord]:
    state = load_checkpoint(checkpoint)
    _check_compatible(state, corpus)
    return predict_dataset(state, _select(corpus, split))


@cli.command("eval")
@click.option("--checkpoint", required=True, help="Checkpoint JSON")
@click.option("--data", "data_file", required=True, help="Dataset JSONL file")
@click.option("--split", default="test", type=SPLIT_CHOICES, help="Split to evaluate")
@click.option("--out", "output_file", required=True, help="Report JSON path")
@click.option("--predictions", "predictions_file", help="Per-sample predictions CSV")
@click.option("--reliability", "reliability_file", help="Reliability bins CSV")
@click.option("--plots-dir", help="Directory for SVG plots")
@click.option("--bins", default=metrics.DEFAULT_BINS, type=click.IntRange(min=1), help="ECE bins")
@click.option(
    "--ece-convention",
    default=EceConvention.POSITIVE.value,
    type=click.Choice([c.value for c in EceConvention]),
)
@exits_on_error
def evaluate(
    checkpoint: str,
    data_file: str,
    split: str,
    output_file: str,
    predictions_file: Optional[str],
    reliability_file: Optional[str],
    plots_dir: Optional[str],
    bins: int,
    ece_convention: str,
):
    """Evaluate a checkpoint on whole scenes."""
    corpus = load_corpus(data_file)
    records = _predictions(checkpoint, corpus, split)
    run_config = _command_config(
        "eval",
        corpus,
        checkpoint=checkpoint,
        data_file=data_file,
        split=split,
        bins=bins,
        ece_convention=ece_convention,
    )
    _write_snapshot(run_config, _snapshot_beside(output_file))
    report = metrics.evaluate(records, bins=bins, convention=EceConvention(ece_convention))
    metrics.write_report(report, output_file)
    if predictions_file:
        metrics.write_predictions_csv(records, predictions_file)
    if reliability_file:
        metrics.write_reliability_csv(report, reliability_file)
    if plots_dir:
        plotting.eval_plots(records, report, plots_dir)

    click.echo(f"Evaluated {report.n_samples} samples ({split})")
    for name, value in report.scalar_metrics().items():
        click.echo(f"  {name}: {'n/a' if value is None else f'{value:.4f}'}")


@cli.command()
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, help="Member checkpoint (repeat)")
@click.option("--data", "data_file", required=True, help="Dataset JSONL file")
@click.option("--split", default="test", type=SPLIT_CHOICES, help="Split to evaluate")
@click.option("--out", "output_file", required=True, help="Report JSON path")
@click.option("--bins", default=metrics.DEFAULT_BINS, type=click.IntRange(min=1), help="ECE bins")
@exits_on_error
def ensemble(checkpoints: Tuple[str, ...], data_file: str, split: str, output_file: str, bins: int):
    """Evaluate the mean prediction of several checkpoints."""
    if len(checkpoints) < 2:
        raise click.UsageError("an ensemble needs at least two --checkpoint values")
    corpus = load_corpus(data_file)
    members = [_predictions(c, corpus, split) for c in checkpoints]
    run_config = _command_config(
        "ensemble",
        corpus,
        checkpoints=list(checkpoints),
        data_file=data_file,
        split=split,
        bins=bins,
    )
    _write_snapshot(run_config, _snapshot_beside(output_file))
    report = metrics.ensemble_eval(members, bins=bins)
    metrics.write_report(report, output_file)
    assert report.ensemble is not None
    click.echo(f"Ensemble of {report.ensemble.n_members} on {report.n_samples} samples")
    click.echo(f"  f1: {report.f1:.4f}")
    click.echo(f"  variance: {report.ensemble.variance:.6f}")
    click.echo(f"  disagreement_rate: {report.ensemble.disagreement_rate:.4f}")


@cli.command("w2-analysis")
@click.option("--target", default="2,5", help="Target Beta as alpha,beta")
@click.option("--grid", default=analysis.DEFAULT_GRID, help="start:stop:step for alpha and beta")
@click.option("--nodes", default=1024, type=click.IntRange(min=64), help="Quadrature nodes")
@click.option("--out", "output_dir", required=True, help="Output directory")
@click.option("--progress/--no-progress", default=False)
@exits_on_error
def w2_analysis(target: str, grid: str, nodes: int, output_dir: str, progress: bool):
    """Compare the moment surrogate against quadrature W2 over a grid."""
    try:
        target_params = analysis.parse_target(target)
        values = analysis.parse_grid(grid)
    except ValueError as e:
        raise click.BadParameter(str(e))
    out_dir = ensure_dir(output_dir)
    run_config = _command_config(
        "w2-analysis", target=list(target_params.as_tuple()), grid=grid, nodes=nodes
    )
    _write_snapshot(run_config, out_dir / SNAPSHOT_FILE)

    frame = analysis.w2_sweep(target_params, values, values, nodes=nodes, progress=progress)
    analysis.write_sweep_csv(frame, out_dir / "w2_sweep.csv")
    plotting.w2_heatmaps(frame, out_dir)
    summary = analysis.sweep_summary(frame)
    write_json(summary, out_dir / "w2_summary.json")
    click.echo(f"W2 sweep: {summary['cells']} cells")
    click.echo(f"  median |diff|: {summary['median_abs_diff']:.3e}")
    click.echo(f"  p95 |diff|: {summary['p95_abs_diff']:.3e}")


@cli.command()
@train_options
@exits_on_error
def ablation(data_file: str, output_dir: str, config_file: Optional[str], progress: bool, **flags: Any):
    """Train the five (lambda1, lambda2) settings and tabulate F1/P/R."""
    flags.pop("lambda1", None)
    flags.pop("lambda2", None)
    run_config = load_run_config(config_file, _train_overrides(output_dir=output_dir, **flags))
    out_dir = Path(output_dir)
    corpus = load_corpus(data_file)
    run_config = _bind_corpus(run_config, corpus)
    args = {"data_file": data_file, "weights": [list(w) for w in analysis.ABLATION_WEIGHTS]}
    run_config = run_config.model_copy(update={"command": "ablation", "args": args})
    _write_snapshot(run_config, out_dir / SNAPSHOT_FILE)
    model_config = run_config.model
    rows = analysis.run_ablation(
        corpus.split("train"),
        corpus.split("val"),
        corpus.split("test"),
        model_config,
        run_config.train,
        progress=progress,
    )
    analysis.write_ablation(rows, out_dir / "ablation.csv", out_dir / "ablation.md")
    plotting.ablation_boxplots(rows, out_dir / "ablation_pr.svg")
    click.echo(analysis.ablation_markdown(rows), nl=False)


@cli.command()
@click.option("--checkpoint", required=True, help="Checkpoint JSON")
@click.option("--data", "data_file", required=True, help="Dataset JSONL file")
@click.option("--split", default="all", type=SPLIT_CHOICES, help="Split to map")
@click.option("--out", "output_dir", required=True, help="Output directory")
@exits_on_error
def riskmap(checkpoint: str, data_file: str, split: str, output_dir: str):
    """Export predicted risk per location as GeoJSON and an SVG scatter."""
    corpus = load_corpus(data_file)
    scenes = _select(corpus, split)
    records = _predictions(checkpoint, corpus, split)
    locations = {s.sample_id: s.location for s in scenes}
    out_dir = ensure_dir(output_dir)
    run_config = _command_config(
        "riskmap", corpus, checkpoint=checkpoint, data_file=data_file, split=split
    )
    _write_snapshot(run_config, out_dir / SNAPSHOT_FILE)

    doc = feature_collection(records, locations)
    write_json(doc, out_dir / "riskmap.geojson")
    plotting.risk_map(records, locations, out_dir / "riskmap.svg")
    click.echo(f"Mapped {len(records)} locations to {out_dir}")


@cli.command()
@click.option("--jsonl", "jsonl_file", required=True, help="Path to JSONL file")
@click.option("--sql", "sql_query", required=True, help="SQL query; the table is named 'records'")
@click.option("--csv", "csv_file", help="Write the result to CSV instead of printing")
@exits_on_error
def query(jsonl_file: str, sql_query: str, csv_file: Optional[str]):
    """Query any JSONL artifact using DuckDB SQL."""
    if csv_file:
        count = export_to_csv(jsonl_file, csv_file, sql_query)
        click.echo(f"Exported {count} rows to {csv_file}")
        return
    result = analyze_with_duckdb(jsonl_file, sql_query)
    click.echo("Query Results:")
    click.echo(result.to_string(index=False))


@cli.command()
@click.option("--data", "data_file", required=True, help="Dataset JSONL file")
@exits_on_error
def validate(data_file: str):
    """Check that every sample record in a dataset file is complete."""
    errors = validate_jsonl_schema(data_file, SAMPLE_FIELDS, kind="sample")
    if errors:
        click.echo(f"Found {len(errors)} problems:")
        for error in errors[:10]:
            click.echo(f"  - {error}")
        if len(errors) > 10:
            click.echo(f"  ... and {len(errors) - 10} more")
        raise StructuralError(f"{data_file} failed validation")
    click.echo("Dataset file is valid")


if __name__ == "__main__":
    cli()
