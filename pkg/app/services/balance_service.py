"""
Balance service: SMOTE oversampling of an image corpus.
"""
import logging
import os
from pathlib import Path

import numpy as np

from app.graphs.raster import FdlImage, write_pgm
from app.sampling.manifest import DISTRIBUTION_NAME, load_dataset, write_class_distribution, write_manifest
from app.sampling.sampling import smote_balance
from app.services.conversion_service import MANIFEST_NAME, safe_name
from app.services.run_manifest import RunManifest

logger = logging.getLogger(__name__)

SYNTHETIC_DIR = "synthetic"


class BalanceService:
    """Writes a balanced manifest next to SMOTE-generated images."""

    def __init__(self, config, output_dir):
        self.config = config
        self.output_dir = Path(output_dir)

    def balance(self, manifest_path):
        """
        Oversample every minority class of ``manifest_path`` to the majority count.

        Originals are referenced in place; synthetics go to synthetic/ and are
        flagged in the new manifest.

        Returns:
            tuple: (balanced ImageDataset, path of the new manifest)
        """
        manifest_path = Path(manifest_path)
        run = RunManifest("balance", self.config, self.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

        with run.timed("loading"):
            dataset = load_dataset(manifest_path, seed=self.config.sampler.seed)
        with run.timed("smote"):
            balanced = smote_balance(dataset, self.config.sampler)

        rows = []
        for i in range(len(dataset)):
            original = (manifest_path.parent / dataset.paths[i]).resolve()
            rows.append({
                "path": Path(os.path.relpath(original, self.output_dir.resolve())).as_posix(),
                "label": int(dataset.labels[i]),
                "class_name": dataset.class_names[dataset.labels[i]],
                "source_id": dataset.source_ids[i],
                "synthetic": bool(dataset.synthetic[i]),
            })

        synthetic = np.flatnonzero(balanced.synthetic[len(dataset):]) + len(dataset)
        with run.timed("writing"):
            if synthetic.size:
                (self.output_dir / SYNTHETIC_DIR).mkdir(exist_ok=True)
            for n, i in enumerate(synthetic):
                label = int(balanced.labels[i])
                name = f"smote_{n:05d}_{safe_name(balanced.class_names[label])}.pgm"
                path = write_pgm(FdlImage(balanced.images[i], label), self.output_dir / SYNTHETIC_DIR / name)
                run.add_file(path)
                rows.append({
                    "path": f"{SYNTHETIC_DIR}/{name}",
                    "label": label,
                    "class_name": balanced.class_names[label],
                    "source_id": balanced.source_ids[i],
                    "synthetic": True,
                })
            new_manifest = run.add_file(write_manifest(rows, self.output_dir / MANIFEST_NAME))
            run.add_file(write_class_distribution(balanced.labels, balanced.class_names,
                                                  self.output_dir / DISTRIBUTION_NAME))

        logger.info(f"event=balance_done originals={len(dataset)} synthetic={synthetic.size}")
        run.write()
        return balanced, new_manifest
