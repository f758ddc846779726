"""
Dataset manifest CSV: one row per image with ``path,label,class_name,source_id,synthetic``.

Paths are stored relative to the manifest's directory. The full ordered class
list lives next to the manifest in ``class_distribution.csv``, so classes
without images keep their index and name.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import DatasetError
from app.graphs.raster import read_pgm
from app.sampling.sampling import ImageDataset, class_distribution

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["path", "label", "class_name", "source_id", "synthetic"]
DISTRIBUTION_NAME = "class_distribution.csv"


def write_manifest(rows, path):
    """
    Args:
        rows (list): dicts with the manifest columns (``synthetic`` optional).
        path (str | Path): Output CSV.
    """
    path = Path(path)
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    frame["synthetic"] = frame["synthetic"].astype("boolean").fillna(False).astype(int)
    frame.to_csv(path, index=False)
    return path


def read_manifest(path):
    """Read a manifest, validating columns and label/class-name consistency."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Manifest not found: {path}")
    frame = pd.read_csv(path, dtype={"path": str, "class_name": str, "source_id": str},
                        keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS[:4] if c not in frame.columns]
    if missing:
        raise DatasetError(f"Manifest {path} lacks columns: {', '.join(missing)}")
    if "synthetic" not in frame.columns:
        frame["synthetic"] = 0
    frame["synthetic"] = frame["synthetic"].astype(int).astype(bool)
    names = frame.groupby("label")["class_name"].nunique()
    if (names > 1).any():
        raise DatasetError(f"Manifest {path} maps one label to several class names")
    return frame


def read_class_names(manifest_path):
    """Ordered class names stored beside a manifest, or None when there are none."""
    path = Path(manifest_path).parent / DISTRIBUTION_NAME
    if not path.exists():
        return None
    frame = pd.read_csv(path, dtype={"class_name": str}, keep_default_na=False)
    if "class_name" not in frame.columns:
        raise DatasetError(f"{path} lacks a class_name column")
    return frame["class_name"].tolist()


def _check_names(frame, names, source):
    pairs = frame[["label", "class_name"]].drop_duplicates()
    clashes = [f"{label}={name!r}" for label, name in pairs.itertuples(index=False)
               if not 0 <= int(label) < len(names) or names[int(label)] != name]
    if clashes:
        raise DatasetError(f"Manifest rows {', '.join(clashes)} disagree with the class list in {source}: {names}")


def class_names_from_manifest(frame, class_names=None):
    """
    Ordered class names; label values index into this list.

    Without an explicit list the names come from the rows themselves, which
    only works when every label up to the largest one has an image.
    """
    if class_names:
        return list(class_names)
    pairs = frame[["label", "class_name"]].drop_duplicates().sort_values("label")
    n = int(pairs["label"].max()) + 1 if len(pairs) else 0
    if len(pairs) != n:
        absent = sorted(set(range(n)) - set(pairs["label"].astype(int)))
        raise DatasetError(f"Labels {absent} have no images and no stored class name; "
                           f"write {DISTRIBUTION_NAME} next to the manifest")
    return pairs["class_name"].tolist()


def load_dataset(manifest_path, class_names=None, seed=13, include_synthetic=True):
    """
    Load every image listed in a manifest into an ImageDataset.

    Class names come from ``class_names``, else from ``class_distribution.csv``
    beside the manifest, else from the manifest rows.
    """
    manifest_path = Path(manifest_path)
    frame = read_manifest(manifest_path)
    if not class_names:
        class_names = read_class_names(manifest_path)
        if class_names is not None:
            _check_names(frame, class_names, manifest_path.parent / DISTRIBUTION_NAME)
    if not include_synthetic:
        frame = frame[~frame["synthetic"]]
    if frame.empty:
        raise DatasetError(f"Manifest {manifest_path} lists no images")
    base = manifest_path.parent
    images = [read_pgm(base / p).pixels for p in frame["path"]]
    logger.info(f"event=dataset_loaded manifest={manifest_path} images={len(images)}")
    return ImageDataset(
        images=np.stack(images),
        labels=frame["label"].to_numpy(dtype=np.int64),
        class_names=class_names_from_manifest(frame, class_names),
        seed=seed,
        source_ids=frame["source_id"].tolist(),
        synthetic=frame["synthetic"].to_numpy(dtype=bool),
        paths=frame["path"].tolist(),
    )


def write_class_distribution(labels, class_names, path):
    """Write ``class_name,count`` rows for every class, empty ones included."""
    path = Path(path)
    pd.DataFrame(class_distribution(labels, class_names), columns=["class_name", "count"]).to_csv(path, index=False)
    return path
