"""
Training service: holdout and k-fold training, evaluation, prediction,
batch-size sweeps and weight exports.
"""
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import CheckpointError, DatasetError
from app.graphs.raster import read_pgm
from app.metrics.classification import (build_report, report_to_json, write_confusion_csv, write_predictions_csv,
                                        write_reliability_csv)
from app.metrics.weights import write_weight_exports
from app.nn.checkpoint import load_checkpoint, save_checkpoint
from app.nn.model import parameter_summary, predict_proba
from app.nn.training import train, write_history_csv
from app.sampling.manifest import load_dataset
from app.sampling.sampling import smote_balance, stratified_kfold, stratified_split_indices
from app.services.run_manifest import RunManifest

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
HISTORY_NAME = "history.csv"
REPORT_NAME = "report.json"
CONFUSION_NAME = "confusion.csv"
RELIABILITY_NAME = "reliability.csv"
PREDICTIONS_NAME = "predictions.csv"
SWEEP_SUMMARY_NAME = "sweep_summary.csv"
FOLDS_SUMMARY_NAME = "folds_summary.csv"
SWEEP_COLUMNS = ["batch_size", "accuracy", "top2", "top3", "kappa", "auc", "precision", "recall", "f1", "mae", "mse"]


def _evaluation_subset(dataset, eval_on):
    """Originals only unless evaluation on the balanced set was requested."""
    if eval_on == "balanced" or not dataset.synthetic.any():
        return dataset
    return dataset.subset(np.flatnonzero(~dataset.synthetic))


def _check_classes(metadata, dataset):
    """
    Checkpoint class names for a manifest dataset.

    Every label present in the manifest must carry the name the checkpoint
    stored at that index.
    """
    n = metadata["model"]["n_classes"]
    named = metadata.get("class_names")
    present = np.unique(dataset.labels)
    clashes = [int(c) for c in present if c >= n or (named and named[c] != dataset.class_names[c])]
    if clashes:
        raise CheckpointError(f"Checkpoint classes {named or n} do not match manifest classes {dataset.class_names}")
    if named:
        return list(named)
    return [dataset.class_names[i] if i < dataset.n_classes else str(i) for i in range(n)]


def _write_report(report, output_dir, run):
    output_dir = Path(output_dir)
    report_to_json(report, output_dir / REPORT_NAME)
    run.add_file(output_dir / REPORT_NAME)
    run.add_file(write_confusion_csv(report, output_dir / CONFUSION_NAME))
    run.add_file(write_reliability_csv(report, output_dir / RELIABILITY_NAME))
    run.add_file(write_predictions_csv(report, output_dir / PREDICTIONS_NAME))


class TrainingService:
    """Orchestrates training and evaluation over manifest datasets."""

    def __init__(self, config):
        """
        Args:
            config (PipelineConfig): Model, training, sampler and evaluation settings.
        """
        self.config = config

    def _model_config(self, dataset, batch_size=None):
        batch_size = batch_size or self.config.train.batch_size
        return replace(self.config.model, n_classes=dataset.n_classes, batch_size=batch_size)

    def _hold_out_validation(self, labels, train_idx):
        """Stratified (fit, validation) indices taken from the training part."""
        ratio = self.config.sampler.val_ratio
        if not ratio:
            return train_idx, None
        fit, val = stratified_split_indices(labels[train_idx], 1.0 - ratio, self.config.train.seed)
        return train_idx[fit], train_idx[val]

    def _prepare(self, dataset, train_idx, test_idx):
        """
        Split and oversample.

        SMOTE runs on the fitting part only unless the corpus was balanced
        beforehand or balance-first ordering is on. Early stopping monitors the
        validation part when ``sampler.val_ratio`` carves one out, otherwise
        the test part.

        Returns:
            tuple: (train, validation, test) ImageDataset
        """
        train_idx, val_idx = self._hold_out_validation(dataset.labels, np.asarray(train_idx))
        if self.config.balance_first and not dataset.synthetic.any():
            balanced = smote_balance(dataset, self.config.sampler)
            # 0 train, 1 validation, 2 test; synthetics follow their first parent
            side = np.full(len(balanced), 2)
            side[train_idx] = 0
            if val_idx is not None:
                side[val_idx] = 1
            for i in range(len(dataset), len(balanced)):
                side[i] = side[balanced.parents[i, 0]]
            parts = [balanced.subset(np.flatnonzero(side == s)) for s in (0, 1, 2)]
            return parts[0], parts[1] if val_idx is not None else parts[2], parts[2]
        train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
        val_set = dataset.subset(val_idx) if val_idx is not None else test_set
        if not dataset.synthetic.any():
            train_set = smote_balance(train_set, self.config.sampler)
        return train_set, val_set, test_set

    def _fit(self, train_set, val_set, test_set, output_dir, run, batch_size=None):
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        model_config = self._model_config(train_set, batch_size)
        train_config = replace(self.config.train, batch_size=model_config.batch_size)
        with run.timed(f"train:{output_dir.name}"):
            result = train(train_set, val_set, model_config, train_config)
        run.add_file(save_checkpoint(result.state, output_dir / CHECKPOINT_NAME, train_set.class_names,
                                     epoch=result.best_epoch, metric=result.best_val_acc,
                                     extra={"monitor": "val_acc", "stopped_epoch": result.stopped_epoch}))
        run.add_file(write_history_csv(result.history, output_dir / HISTORY_NAME))
        evaluated = _evaluation_subset(test_set, self.config.eval_on)
        report = build_report(evaluated.labels, predict_proba(result.state, evaluated.images), test_set.class_names)
        _write_report(report, output_dir, run)
        return result, report

    def train(self, manifest_path, output_dir):
        """
        Train on a manifest in holdout or k-fold mode.

        Returns:
            list: EvalReport per holdout run or per fold.
        """
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        run = RunManifest("train", self.config, output_dir)
        dataset = load_dataset(manifest_path, seed=self.config.train.seed)
        summary = parameter_summary(self._model_config(dataset))
        logger.info(f"event=model_parameters total={summary['total']} lsfe={summary['LSFE']} "
                    f"s2tlr={summary['S2TLR']} g2a={summary['G2A']}")

        if self.config.cv_mode == "kfold":
            reports = self._train_folds(dataset, output_dir, run)
        else:
            train_idx, test_idx = stratified_split_indices(dataset.labels, self.config.sampler.split_ratio,
                                                           self.config.train.seed)
            train_set, val_set, test_set = self._prepare(dataset, train_idx, test_idx)
            _, report = self._fit(train_set, val_set, test_set, output_dir, run)
            reports = [report]
        run.write()
        return reports

    def _train_folds(self, dataset, output_dir, run):
        reports = []
        folds = stratified_kfold(dataset.labels, self.config.sampler.folds, self.config.train.seed)
        for number, (train_idx, val_idx) in enumerate(folds, start=1):
            logger.info(f"event=fold_start fold={number} train={len(train_idx)} val={len(val_idx)}")
            train_set, stop_set, val_set = self._prepare(dataset, train_idx, val_idx)
            _, report = self._fit(train_set, stop_set, val_set, output_dir / f"fold_{number:02d}", run)
            reports.append(report)

        frame = pd.DataFrame([r.scalars() for r in reports])
        summary = pd.DataFrame({"metric": frame.columns, "mean": frame.mean().values,
                                "std": frame.std(ddof=0).values})
        summary.to_csv(output_dir / FOLDS_SUMMARY_NAME, index=False)
        run.add_file(output_dir / FOLDS_SUMMARY_NAME)
        return reports

    def evaluate(self, checkpoint_path, manifest_path, output_dir):
        """Score a checkpoint on every (or every original) image of a manifest."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        run = RunManifest("evaluate", self.config, output_dir)
        state, metadata = load_checkpoint(checkpoint_path)
        dataset = load_dataset(manifest_path)
        dataset.class_names = _check_classes(metadata, dataset)
        evaluated = _evaluation_subset(dataset, self.config.eval_on)
        with run.timed("evaluate"):
            report = build_report(evaluated.labels, predict_proba(state, evaluated.images), dataset.class_names)
        _write_report(report, output_dir, run)
        run.write()
        return report

    def predict(self, checkpoint_path, image_path):
        """
        Returns:
            tuple: (class index, class name, softmax scores)
        """
        state, metadata = load_checkpoint(checkpoint_path)
        image = read_pgm(image_path)
        side = state.config.input_side
        if image.pixels.shape != (side, side):
            raise DatasetError(f"Image {image_path} is {image.pixels.shape}, the model expects ({side}, {side})")
        scores = predict_proba(state, image.pixels[None])[0]
        index = int(np.argmax(scores))
        names = metadata.get("class_names") or [str(i) for i in range(len(scores))]
        logger.info(f"event=prediction image={image_path} class={names[index]!r} score={scores[index]:.4f}")
        return index, names[index], scores

    def sweep(self, manifest_path, output_dir, batch_sizes):
        """One holdout training per batch size plus a summary table."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        run = RunManifest("sweep", self.config, output_dir)
        dataset = load_dataset(manifest_path, seed=self.config.train.seed)
        train_idx, test_idx = stratified_split_indices(dataset.labels, self.config.sampler.split_ratio,
                                                       self.config.train.seed)
        train_set, val_set, test_set = self._prepare(dataset, train_idx, test_idx)

        rows = []
        for batch_size in batch_sizes:
            _, report = self._fit(train_set, val_set, test_set, output_dir / f"batch_{batch_size}", run, batch_size)
            rows.append({"batch_size": batch_size, **report.scalars()})
        pd.DataFrame(rows, columns=SWEEP_COLUMNS).to_csv(output_dir / SWEEP_SUMMARY_NAME, index=False)
        run.add_file(output_dir / SWEEP_SUMMARY_NAME)
        run.write()
        return rows

    def export_weights(self, checkpoint_path, module_tag, output_path, bins=None):
        """Write the per-block weight CSV (and histogram when ``bins`` is set)."""
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        run = RunManifest("export-weights", self.config, output_path.parent)
        state, _ = load_checkpoint(checkpoint_path)
        written = write_weight_exports(state, module_tag, output_path, bins)
        run.add_files(written)
        run.write()
        return written
