"""
Epoch normalisation, SMOTE class balancing and stratified partitions.

All randomness flows from an explicitly seeded ``numpy.random.Generator``.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import NearestNeighbors

from app.errors import DatasetError

logger = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    k_neighbors: int = 5
    seed: int = 13
    split_ratio: float = 0.8
    folds: int = 10
    # share of the training part held back for early stopping; 0 monitors the test split
    val_ratio: float = 0.0

    def validate(self):
        problems = []
        if self.k_neighbors < 1:
            problems.append(f"sampler.k_neighbors must be >= 1 (got {self.k_neighbors})")
        if not 0.0 < self.split_ratio < 1.0:
            problems.append(f"sampler.split_ratio must be in (0, 1) (got {self.split_ratio})")
        if not 0.0 <= self.val_ratio < 1.0:
            problems.append(f"sampler.val_ratio must be in [0, 1) (got {self.val_ratio})")
        if self.folds < 2:
            problems.append(f"sampler.folds must be >= 2 (got {self.folds})")
        return problems


@dataclass
class ImageDataset:
    """
    Stacked images with their labels.

    Attributes:
        images: (N, side, side) pixel array in [0, 1]
        labels: (N,) class indices
        class_names: ordered class names; index = label
        source_ids: per-image provenance
        synthetic: per-image flag for SMOTE samples
        parents: (N, 2) indices of the two SMOTE parents, -1 for originals
    """
    images: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    seed: int = 13
    source_ids: Optional[List[str]] = None
    synthetic: Optional[np.ndarray] = None
    parents: Optional[np.ndarray] = None
    paths: Optional[List[str]] = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if len(self.images) != n:
            raise DatasetError(f"{len(self.images)} images but {n} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError(f"Labels must lie in [0, {len(self.class_names)})")
        if self.source_ids is None:
            self.source_ids = [""] * n
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        if self.parents is None:
            self.parents = np.full((n, 2), -1, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            class_names=list(self.class_names),
            seed=self.seed,
            source_ids=[self.source_ids[i] for i in indices],
            synthetic=self.synthetic[indices],
            parents=self.parents[indices],
            paths=[self.paths[i] for i in indices] if self.paths is not None else None,
        )


def minmax_normalize(series):
    """Scale to [0, 1]; a constant series maps to all zeros."""
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def class_distribution(labels, class_names):
    """Ordered (class_name, count) pairs."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(class_names))
    return [(name, int(count)) for name, count in zip(class_names, counts)]


def smote_balance(dataset, config=None):
    """
    Oversample every class up to the majority count with SMOTE.

    A synthetic sample is x + u * (x_nn - x) with u ~ U[0, 1] and x_nn drawn
    from the k nearest same-class neighbours of x (Euclidean, on flattened
    pixels). Originals are kept first, in order; synthetics follow by class.

    Args:
        dataset (ImageDataset): Dataset to balance.
        config (SamplerConfig): Neighbour count and seed.

    Returns:
        ImageDataset: Balanced dataset with ``synthetic`` and ``parents`` set.
    """
    config = config or SamplerConfig()
    counts = np.bincount(dataset.labels, minlength=dataset.n_classes)
    majority = int(counts.max()) if len(dataset) else 0
    rng = np.random.default_rng(config.seed)
    flat = dataset.images.reshape(len(dataset), -1).astype(np.float64)

    new_images, new_labels, new_parents, new_sources = [], [], [], []
    for label, count in enumerate(counts):
        needed = majority - int(count)
        if needed == 0:
            continue
        name = dataset.class_names[label]
        if count < 2:
            raise DatasetError(f"Class '{name}' has {count} sample(s); SMOTE needs at least 2")
        members = np.flatnonzero(dataset.labels == label)
        k = min(config.k_neighbors, int(count) - 1)
        if k < config.k_neighbors:
            logger.warning(f"event=smote_k_reduced class={name!r} k={k} requested={config.k_neighbors}")

        nn = NearestNeighbors(n_neighbors=k + 1).fit(flat[members])
        neighbours = nn.kneighbors(flat[members], return_distance=False)
        # drop each sample from its own neighbour list
        own = np.arange(len(members))[:, None]
        neighbours = np.array([row[row != i][:k] for row, i in zip(neighbours, own[:, 0])])

        base = rng.integers(0, len(members), size=needed)
        pick = neighbours[base, rng.integers(0, k, size=needed)]
        u = rng.random(needed)[:, None]
        a, b = flat[members[base]], flat[members[pick]]
        synth = np.clip(a + u * (b - a), np.minimum(a, b), np.maximum(a, b))

        new_images.append(synth.reshape((needed,) + dataset.images.shape[1:]))
        new_labels.append(np.full(needed, label))
        new_parents.append(np.column_stack([members[base], members[pick]]))
        new_sources.extend(f"smote:{members[x]}+{members[y]}" for x, y in zip(base, pick))
        logger.info(f"event=smote_class class={name!r} original={count} synthetic={needed}")

    if not new_labels:
        return dataset.subset(np.arange(len(dataset)))

    return ImageDataset(
        images=np.concatenate([dataset.images.astype(np.float64)] + new_images),
        labels=np.concatenate([dataset.labels] + new_labels),
        class_names=list(dataset.class_names),
        seed=config.seed,
        source_ids=list(dataset.source_ids) + new_sources,
        synthetic=np.concatenate([dataset.synthetic, np.ones(sum(len(x) for x in new_labels), dtype=bool)]),
        parents=np.concatenate([dataset.parents] + new_parents),
        paths=None,
    )


def stratified_split_indices(labels, ratio, seed):
    """
    Per-class proportional train/test index split.

    Train counts use largest-remainder rounding of ratio * class size so the
    total matches round(ratio * N); both parts are shuffled by ``seed``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    sizes = np.array([np.sum(labels == c) for c in classes])
    exact = sizes * ratio
    take = np.floor(exact).astype(np.int64)
    remaining = int(round(len(labels) * ratio)) - int(take.sum())
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - take[i]), i))
    for i in order[:max(remaining, 0)]:
        take[i] += 1

    train, test = [], []
    for c, t in zip(classes, take):
        members = rng.permutation(np.flatnonzero(labels == c))
        train.append(members[:t])
        test.append(members[t:])
    train = rng.permutation(np.concatenate(train)) if train else np.zeros(0, dtype=np.int64)
    test = rng.permutation(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
    return train, test


def stratified_split(dataset, ratio, seed):
    """Split an ImageDataset into (train, test) datasets."""
    train, test = stratified_split_indices(dataset.labels, ratio, seed)
    return dataset.subset(train), dataset.subset(test)


def stratified_kfold(labels, folds, seed):
    """
    Stratified k-fold partition of indices.

    Returns:
        list: (train_idx, val_idx) per fold; validation folds are disjoint and
        cover every index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    present = np.bincount(labels)
    minority = int(present[present > 0].min()) if labels.size else 0
    if folds > minority:
        raise DatasetError(f"{folds} folds requested but the smallest class has {minority} samples")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return [(train, val) for train, val in splitter.split(np.zeros(len(labels)), labels)]
