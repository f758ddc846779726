"""
Classification metrics and evaluation reports.

Labels are integer class indices in manifest order. Rates defined as 0/0
evaluate to 0.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from app.errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

RELIABILITY_METRICS = ("accuracy", "kappa", "precision", "recall", "f1", "auc")


def _labels(values, name="labels"):
    values = np.asarray(values, dtype=np.int64).ravel()
    if values.size == 0:
        raise DatasetError(f"Cannot score empty {name}")
    return values


def confusion_matrix(y_true, y_pred, n_classes):
    """
    Counts with rows indexed by the true class and columns by the prediction.

    Raises:
        ShapeError: length mismatch or a label outside [0, n_classes).
    """
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError("Label vectors differ in length", y_true.shape, y_pred.shape)
    for values in (y_true, y_pred):
        bad = np.flatnonzero((values < 0) | (values >= n_classes))
        if bad.size:
            raise ShapeError(f"Label {values[bad[0]]} at index {bad[0]} is outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(y_true, y_pred):
    y_true, y_pred = _labels(y_true), _labels(y_pred, "predictions")
    if y_true.shape != y_pred.shape:
        raise ShapeError("Label vectors differ in length", y_true.shape, y_pred.shape)
    return float(np.mean(y_true == y_pred))


def top_k_indices(scores, k):
    """Column indices of the k best scores per row; ties favour lower indices."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def top_k_accuracy(y_true, scores, k):
    """Share of rows whose true class is among the k highest scores."""
    y_true = _labels(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or len(scores) != len(y_true):
        raise ShapeError("Scores must have one row per label", scores.shape, y_true.shape)
    if not 1 <= k <= scores.shape[1]:
        raise ShapeError(f"k={k} must lie in [1, {scores.shape[1]}]")
    return float(np.mean((top_k_indices(scores, k) == y_true[:, None]).any(axis=1)))


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def precision_recall_f1(confusion):
    """
    One-vs-rest precision, recall and F1.

    Returns:
        tuple: (macro precision, macro recall, macro F1, per-class dict of arrays)
    """
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    per_class = {"precision": precision, "recall": recall, "f1": f1, "support": cm.sum(axis=1).astype(np.int64)}
    return float(precision.mean()), float(recall.mean()), float(f1.mean()), per_class


def cohens_kappa(confusion):
    """(p_o - p_e) / (1 - p_e); 1 or 0 when p_e is 1, depending on p_o."""
    cm = np.asarray(confusion, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise DatasetError("Cohen's kappa needs at least one sample")
    p_o = np.trace(cm) / total
    p_e = float(np.sum(cm.sum(axis=1) * cm.sum(axis=0))) / total ** 2
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def auc_per_class(y_true, scores):
    """
    One-vs-rest ROC AUC per class; None for classes absent from ``y_true``
    or present in every row (no negatives).
    """
    y_true = _labels(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ShapeError("Scores must be finite")
    values = []
    for c in range(scores.shape[1]):
        positive = y_true == c
        if positive.all() or not positive.any():
            values.append(None)
            continue
        values.append(float(roc_auc_score(positive, scores[:, c])))
    return values


def auc_macro_ovr(y_true, scores):
    """Macro mean of one-vs-rest AUCs over the classes present in ``y_true``."""
    values = [v for v in auc_per_class(y_true, scores) if v is not None]
    return float(np.mean(values)) if values else float("nan")


def mae_mse(y_true, y_pred):
    """Mean absolute and mean squared error of the integer class codes."""
    diff = _labels(y_true).astype(np.float64) - _labels(y_pred, "predictions").astype(np.float64)
    return float(np.mean(np.abs(diff))), float(np.mean(diff ** 2))


@dataclass
class EvalReport:
    class_names: List[str]
    confusion: np.ndarray
    accuracy: float
    top2: float
    top3: float
    kappa: float
    auc_macro: float
    precision: float
    recall: float
    macro_f1: float
    mae: float
    mse: float
    per_class: Dict[str, dict] = field(default_factory=dict)
    samples: int = 0
    skipped_auc_classes: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    predictions: Optional[np.ndarray] = field(default=None, repr=False)
    targets: Optional[np.ndarray] = field(default=None, repr=False)
    scores: Optional[np.ndarray] = field(default=None, repr=False)

    def scalars(self):
        return {
            "accuracy": self.accuracy, "top2": self.top2, "top3": self.top3,
            "kappa": self.kappa, "auc": self.auc_macro, "precision": self.precision,
            "recall": self.recall, "f1": self.macro_f1, "mae": self.mae, "mse": self.mse,
        }


def build_report(y_true, scores, class_names):
    """
    Every metric for one set of softmax scores.

    Top-k values with k beyond the class count fall back to 1.0.
    """
    y_true = _labels(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(class_names)
    if scores.shape != (len(y_true), n):
        raise ShapeError("Scores must be (samples, classes)", scores.shape, (len(y_true), n))
    y_pred = np.argmax(scores, axis=1)
    cm = confusion_matrix(y_true, y_pred, n)
    precision, recall, f1, per_class = precision_recall_f1(cm)
    aucs = auc_per_class(y_true, scores)
    mae, mse = mae_mse(y_true, y_pred)
    notes = []
    undefined = [class_names[c] for c in range(n) if per_class["support"][c] == 0 or cm[:, c].sum() == 0]
    if undefined:
        notes.append(f"0/0 rates scored as 0 for: {', '.join(undefined)}")
    skipped = [class_names[c] for c, v in enumerate(aucs) if v is None]
    if skipped:
        notes.append(f"AUC skipped for classes without positives or negatives: {', '.join(skipped)}")

    report = EvalReport(
        class_names=list(class_names),
        confusion=cm,
        accuracy=accuracy(y_true, y_pred),
        top2=top_k_accuracy(y_true, scores, 2) if n >= 2 else 1.0,
        top3=top_k_accuracy(y_true, scores, 3) if n >= 3 else 1.0,
        kappa=cohens_kappa(cm),
        auc_macro=float(np.mean([v for v in aucs if v is not None])) if len(skipped) < n else float("nan"),
        precision=precision,
        recall=recall,
        macro_f1=f1,
        mae=mae,
        mse=mse,
        per_class={
            name: {
                "precision": float(per_class["precision"][c]),
                "recall": float(per_class["recall"][c]),
                "f1": float(per_class["f1"][c]),
                "support": int(per_class["support"][c]),
                "auc": aucs[c],
            }
            for c, name in enumerate(class_names)
        },
        samples=len(y_true),
        skipped_auc_classes=skipped,
        notes=notes,
        predictions=y_pred,
        targets=y_true,
        scores=scores,
    )
    logger.info(f"event=report samples={report.samples} accuracy={report.accuracy:.4f} "
                f"kappa={report.kappa:.4f} f1={report.macro_f1:.4f}")
    return report


def _json_float(value):
    return None if value is None or not np.isfinite(value) else float(value)


def report_to_dict(report):
    body = {k: _json_float(v) for k, v in report.scalars().items()}
    body.update({
        "class_names": report.class_names,
        "samples": report.samples,
        "confusion": report.confusion.tolist(),
        "per_class": report.per_class,
        "skipped_auc_classes": report.skipped_auc_classes,
        "notes": report.notes,
    })
    return body


def report_to_json(report, path=None):
    """Report as JSON text; also written to ``path`` when given."""
    text = json.dumps(report_to_dict(report), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def write_confusion_csv(report, path):
    """Confusion matrix with true classes as rows and predictions as columns."""
    path = Path(path)
    frame = pd.DataFrame(report.confusion, index=report.class_names, columns=report.class_names)
    frame.index.name = "true"
    frame.to_csv(path)
    return path


def reliability_profile(report):
    """The six headline rates plotted on the reliability diagram."""
    values = {
        "accuracy": report.accuracy, "kappa": report.kappa, "precision": report.precision,
        "recall": report.recall, "f1": report.macro_f1, "auc": report.auc_macro,
    }
    return [(name, values[name]) for name in RELIABILITY_METRICS]


def write_reliability_csv(report, path):
    path = Path(path)
    pd.DataFrame(reliability_profile(report), columns=["metric", "value"]).to_csv(path, index=False)
    return path


def write_predictions_csv(report, path):
    """
    Per-sample ``index,true,pred,loss,score_0..score_{n-1}`` rows.

    ``loss`` is the cross-entropy -log p(true class), floored at 1e-300.
    """
    if report.scores is None or report.targets is None:
        raise DatasetError("Report carries no per-sample scores")
    path = Path(path)
    picked = report.scores[np.arange(report.samples), report.targets]
    frame = pd.DataFrame({
        "index": np.arange(report.samples),
        "true": report.targets,
        "pred": report.predictions,
        "loss": -np.log(np.clip(picked, 1e-300, None)),
    })
    for c in range(len(report.class_names)):
        frame[f"score_{c}"] = report.scores[:, c]
    frame.to_csv(path, index=False)
    return path
