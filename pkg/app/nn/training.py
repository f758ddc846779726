"""
Mini-batch training loop with validation-accuracy early stopping.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from app.errors import ConfigError, DatasetError
from app.nn.model import evaluate_loss, init_state, loss_and_grad
from app.nn.optim import adam_step

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.001
    patience: int = 15
    seed: int = 13
    batch_size: int = 32

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"train.epochs must be >= 1 (got {self.epochs})")
        if self.patience < 1:
            problems.append(f"train.patience must be >= 1 (got {self.patience})")
        if self.batch_size < 1:
            problems.append(f"train.batch_size must be >= 1 (got {self.batch_size})")
        if not self.lr > 0:
            problems.append(f"train.lr must be > 0 (got {self.lr})")
        return problems


class EarlyStopping:
    """
    Tracks the best validation accuracy (maximum mode).

    Training stops once ``patience`` epochs in a row fail to beat the best
    value strictly; the weights of the best epoch are kept.
    """

    def __init__(self, patience):
        self.patience = patience
        self.best_metric = -np.inf
        self.best_epoch = 0
        self.best_state = None
        self.wait = 0

    def update(self, epoch, metric, state):
        """Returns True when training should stop after this epoch."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.best_state = state.copy()
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainResult:
    state: object
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")
    stopped_epoch: int = 0
    stopped_early: bool = False


def _check_datasets(train_set, val_set, n_classes):
    if len(train_set) == 0 or len(val_set) == 0:
        raise DatasetError("Training and validation sets must both be non-empty")
    for name, ds in (("training", train_set), ("validation", val_set)):
        if ds.n_classes != n_classes:
            raise DatasetError(f"The {name} set has {ds.n_classes} classes but the model expects {n_classes}")


def train(train_set, val_set, model_config, train_config=None, state=None):
    """
    Train AttDiCNN with Adam on shuffled mini-batches.

    Args:
        train_set (ImageDataset): Training images.
        val_set (ImageDataset): Images monitored for early stopping.
        model_config (ModelConfig): Architecture; ``n_classes`` must match the datasets.
        train_config (TrainConfig): Epochs, learning rate, patience, seed and batch size.
        state (ModelState): Optional starting weights; a fresh seeded model otherwise.

    Returns:
        TrainResult: Best-epoch weights and per-epoch history rows.
    """
    train_config = train_config or TrainConfig()
    problems = train_config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    _check_datasets(train_set, val_set, model_config.n_classes)

    state = state if state is not None else init_state(model_config)
    rng = np.random.default_rng(train_config.seed)
    stopper = EarlyStopping(train_config.patience)
    history = []
    n = len(train_set)
    batch = train_config.batch_size
    batch_index = 0
    stopped_early = False
    epoch = 0

    logger.info(f"event=train_start samples={n} val_samples={len(val_set)} epochs={train_config.epochs} "
                f"batch_size={batch} lr={train_config.lr} seed={train_config.seed}")
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            labels = train_set.labels[idx]
            loss, grads, probabilities = loss_and_grad(state, train_set.images[idx], labels,
                                                       mode="train", rng=rng, batch_index=batch_index)
            state = adam_step(state, grads, train_config.lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probabilities, axis=1) == labels))
            batch_index += 1

        val_loss, val_acc, _ = evaluate_loss(state, val_set.images, val_set.labels)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        history.append(row)
        logger.info(f"event=epoch_end epoch={epoch} train_loss={row['train_loss']:.6f} "
                    f"train_acc={row['train_acc']:.4f} val_loss={val_loss:.6f} val_acc={val_acc:.4f}")
        if stopper.update(epoch, val_acc, state):
            stopped_early = True
            logger.info(f"event=early_stop epoch={epoch} best_epoch={stopper.best_epoch} "
                        f"best_val_acc={stopper.best_metric:.4f}")
            break

    return TrainResult(
        state=stopper.best_state if stopper.best_state is not None else state,
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_acc=float(stopper.best_metric),
        stopped_epoch=epoch,
        stopped_early=stopped_early,
    )


def write_history_csv(history, path):
    """Write ``epoch,train_loss,train_acc,val_loss,val_acc`` rows."""
    path = Path(path)
    pd.DataFrame(history, columns=HISTORY_COLUMNS).to_csv(path, index=False)
    return path

