"""
Command-line routes: convert, balance, train, evaluate, predict,
export-weights, sweep and verify.
"""
import functools
import json
import logging

import click

from app.config import BATCH_SIZES, CV_MODES, EVAL_TARGETS, LOG_LEVEL, load_config
from app.errors import SleepFdlError
from app.services.balance_service import BalanceService
from app.services.conversion_service import ConversionService
from app.services.run_manifest import verify_manifest
from app.services.training_service import TrainingService

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def handle_errors(command):
    """Log package errors as ``event=error`` records and exit with status 1."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SleepFdlError as e:
            logger.error(f"event=error type={type(e).__name__} message={e}")
            click.get_current_context().exit(1)
    return wrapper


def _config(ctx, overrides):
    return load_config(ctx.obj["config_path"], overrides)


def training_options(command):
    """Options shared by train and sweep."""
    options = [
        click.option("--epochs", type=int, help="Maximum training epochs."),
        click.option("--lr", type=float, help="Adam learning rate."),
        click.option("--patience", type=int, help="Early-stopping patience in epochs."),
        click.option("--seed", type=int, help="Seed for shuffling, dropout and splits."),
        click.option("--split-ratio", type=float, help="Training share of the holdout split."),
        click.option("--paper-faithful", "--balance-first", "balance_first", is_flag=True, default=None,
                     help="Oversample the whole corpus before splitting."),
        click.option("--val-ratio", type=float,
                     help="Share of the training part held back for early stopping (0 monitors the test split)."),
        click.option("--eval-on", type=click.Choice(EVAL_TARGETS), help="Score original or balanced images."),
        click.option("--dtype", type=click.Choice(["float32", "float64"]), help="Floating-point precision."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _training_overrides(epochs, lr, patience, seed, split_ratio, balance_first, val_ratio, eval_on, dtype):
    return {
        "train.epochs": epochs,
        "train.lr": lr,
        "train.patience": patience,
        "train.seed": seed,
        "model.seed": seed,
        "sampler.seed": seed,
        "sampler.split_ratio": split_ratio,
        "balance_first": balance_first,
        "sampler.val_ratio": val_ratio,
        "eval_on": eval_on,
        "model.dtype": dtype,
    }


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON config file (defaults to $SLEEPFDL_CONFIG).")
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=LOG_LEVEL,
              show_default=True)
@click.pass_context
def cli(ctx, config_path, log_level):
    """Sleep-stage classification from force-directed visibility-graph images."""
    logging.getLogger().setLevel(log_level.upper())
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@cli.command()
@click.argument("recordings", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--hypnogram", "hypnograms", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Annotation file per recording, in the same order.")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--preset", type=str, help="EDFX, HMC, NCH or custom.")
@click.option("--channel", type=str, help="Channel label to convert.")
@click.option("--epoch-seconds", type=float, help="Epoch length in seconds.")
@click.option("--resample-hz", type=float, help="Resample the channel before epoching.")
@click.option("--crop-seconds", type=float, help="Keep only the first N seconds.")
@click.option("--jobs", type=int, help="Parallel conversion workers.")
@click.pass_context
@handle_errors
def convert(ctx, recordings, hypnograms, output_dir, preset, channel, epoch_seconds, resample_hz, crop_seconds, jobs):
    """Convert EDF recordings into labelled layout images."""
    if hypnograms and len(hypnograms) != len(recordings):
        raise click.UsageError(f"{len(hypnograms)} hypnograms given for {len(recordings)} recordings")
    config = _config(ctx, {
        "paths.output_dir": output_dir,
        "epoching.preset": preset,
        "epoching.channel": channel,
        "epoching.epoch_s": epoch_seconds,
        "epoching.resample_hz": resample_hz,
        "epoching.crop_s": crop_seconds,
        "jobs": jobs,
    })
    pairs = list(zip(recordings, hypnograms or [None] * len(recordings)))
    result = ConversionService(config, config.paths.output_dir).convert(pairs)
    click.echo(f"{len(result.rows)} images written to {result.manifest_path}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--k-neighbors", type=int, help="SMOTE neighbour count.")
@click.option("--seed", type=int, help="SMOTE seed.")
@click.pass_context
@handle_errors
def balance(ctx, manifest, output_dir, k_neighbors, seed):
    """Oversample minority classes with SMOTE."""
    config = _config(ctx, {"paths.output_dir": output_dir, "sampler.k_neighbors": k_neighbors, "sampler.seed": seed})
    dataset, path = BalanceService(config, config.paths.output_dir).balance(manifest)
    click.echo(f"{len(dataset)} images listed in {path}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--batch-size", type=int, help="Mini-batch size.")
@click.option("--cv", "cv_mode", type=click.Choice(CV_MODES), help="Holdout split or stratified k-fold.")
@click.option("--folds", type=int, help="Fold count in k-fold mode.")
@training_options
@click.pass_context
@handle_errors
def train(ctx, manifest, output_dir, batch_size, cv_mode, folds, **options):
    """Train AttDiCNN on a manifest."""
    config = _config(ctx, {
        "paths.output_dir": output_dir,
        "train.batch_size": batch_size,
        "cv_mode": cv_mode,
        "sampler.folds": folds,
        **_training_overrides(**options),
    })
    reports = TrainingService(config).train(manifest, config.paths.output_dir)
    for report in reports:
        click.echo(f"accuracy={report.accuracy:.4f} kappa={report.kappa:.4f} f1={report.macro_f1:.4f}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--eval-on", type=click.Choice(EVAL_TARGETS), help="Score original or balanced images.")
@click.pass_context
@handle_errors
def evaluate(ctx, checkpoint, manifest, output_dir, eval_on):
    """Score a checkpoint on a manifest and write the metrics report."""
    config = _config(ctx, {"paths.output_dir": output_dir, "eval_on": eval_on})
    report = TrainingService(config).evaluate(checkpoint, manifest, config.paths.output_dir)
    click.echo(f"accuracy={report.accuracy:.4f} kappa={report.kappa:.4f} f1={report.macro_f1:.4f}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@handle_errors
def predict(ctx, checkpoint, image):
    """Print the predicted class and softmax scores of one PGM image."""
    index, name, scores = TrainingService(_config(ctx, {})).predict(checkpoint, image)
    click.echo(json.dumps({"class_index": index, "class_name": name, "scores": [float(s) for s in scores]}))


@cli.command("export-weights")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--tag", required=True, type=click.Choice(["LSFE", "S2TLR", "G2A"], case_sensitive=False))
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False), help="CSV path.")
@click.option("--bins", type=int, help="Also write a histogram with this many bins.")
@click.pass_context
@handle_errors
def export_weights(ctx, checkpoint, tag, output, bins):
    """Export the kernel weights of one block."""
    written = TrainingService(_config(ctx, {})).export_weights(checkpoint, tag, output, bins)
    click.echo(", ".join(str(p) for p in written))


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--batch-sizes", default=",".join(str(b) for b in BATCH_SIZES), show_default=True,
              help="Comma-separated batch sizes.")
@training_options
@click.pass_context
@handle_errors
def sweep(ctx, manifest, output_dir, batch_sizes, **options):
    """Train once per batch size and summarise the reports."""
    try:
        sizes = [int(b) for b in batch_sizes.split(",") if b.strip()]
    except ValueError:
        raise click.BadParameter(f"not a list of integers: {batch_sizes}", param_hint="--batch-sizes")
    config = _config(ctx, {"paths.output_dir": output_dir, **_training_overrides(**options)})
    rows = TrainingService(config).sweep(manifest, config.paths.output_dir, sizes)
    for row in rows:
        click.echo(f"batch_size={row['batch_size']} accuracy={row['accuracy']:.4f} kappa={row['kappa']:.4f}")


@cli.command()
@click.argument("run_manifest", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def verify(run_manifest):
    """Re-hash the files recorded in a run manifest."""
    failures = verify_manifest(run_manifest)
    for relative in failures:
        click.echo(f"MISMATCH {relative}")
    if failures:
        click.get_current_context().exit(1)
    click.echo("all files verified")
