"""
Conversion service: EEG recordings to force-directed layout images.
"""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from joblib import Parallel, delayed

from app.errors import DatasetError, SleepFdlError
from app.graphs.layout import kamada_kawai
from app.graphs.raster import rasterize, write_pgm
from app.graphs.visibility import build_nvg
from app.sampling.manifest import DISTRIBUTION_NAME, write_class_distribution, write_manifest
from app.sampling.sampling import minmax_normalize
from app.signals.epochs import recording_epochs
from app.services.run_manifest import RunManifest

logger = logging.getLogger(__name__)

IMAGE_DIR = "images"
MANIFEST_NAME = "manifest.csv"


def safe_name(text, fallback="unknown"):
    """File-name-safe form of a source id or class name."""
    cleaned = re.sub(r"[^A-Za-z0-9]+", "_", str(text)).strip("_")
    return cleaned or fallback


def image_name(source_id, epoch_index, class_name):
    return f"{safe_name(source_id)}_{epoch_index:05d}_{safe_name(class_name)}.pgm"


def epoch_to_image(samples, label, layout_config, render_config):
    """Normalise, build the visibility graph, lay it out and draw it."""
    graph = build_nvg(minmax_normalize(samples))
    result = kamada_kawai(graph, layout_config)
    return rasterize(result, render_config, label=label, edges=graph.edge_array())


@dataclass
class ConversionResult:
    rows: List[dict] = field(default_factory=list)
    failed: List[str] = field(default_factory=list)
    manifest_path: Optional[Path] = None
    run_manifest_path: Optional[Path] = None


class ConversionService:
    """Runs the recording-to-image half of the pipeline."""

    def __init__(self, config, output_dir):
        """
        Args:
            config (PipelineConfig): Epoching, layout, render and parallelism settings.
            output_dir (str | Path): Receives images/, manifest.csv and run_manifest.json.
        """
        self.config = config
        self.output_dir = Path(output_dir)
        self.preset = config.epoching.preset_definition()

    def _epochs(self, recordings):
        epochs, failed = [], []
        epoching = self.config.epoching
        for psg_path, hypnogram_path in recordings:
            source_id = Path(psg_path).stem
            try:
                found = recording_epochs(psg_path, hypnogram_path, self.preset, epoching.epoch_s,
                                         resample_hz=epoching.resample_hz, crop_s=epoching.crop_s,
                                         source_id=source_id)
            except (SleepFdlError, OSError) as e:
                logger.error(f"event=recording_failed path={psg_path} error={e}")
                failed.append(str(psg_path))
                continue
            epochs.extend(found)
        return epochs, failed

    def convert(self, recordings: Sequence[tuple]):
        """
        Convert every kept epoch of every recording into a PGM image.

        Args:
            recordings: (psg_path, hypnogram_path or None) pairs.

        Returns:
            ConversionResult: Manifest rows plus the recordings that failed.

        Raises:
            DatasetError: every recording failed or no epoch survived.
        """
        manifest = RunManifest("convert", self.config, self.output_dir)
        image_dir = self.output_dir / IMAGE_DIR
        image_dir.mkdir(parents=True, exist_ok=True)

        with manifest.timed("epoching"):
            epochs, failed = self._epochs(recordings)
        if recordings and len(failed) == len(recordings):
            raise DatasetError(f"All {len(recordings)} recordings failed to convert")
        if not epochs:
            raise DatasetError("No labelled epochs were found in the given recordings")

        with manifest.timed("rendering"):
            images = Parallel(n_jobs=self.config.jobs)(
                delayed(epoch_to_image)(e.samples, e.stage, self.config.layout, self.config.render)
                for e in epochs
            )

        class_names = self.preset.stage_map.class_names
        rows = []
        with manifest.timed("writing"):
            for epoch, image in zip(epochs, images):
                name = image_name(epoch.source_id, epoch.index, class_names[epoch.stage])
                manifest.add_file(write_pgm(image, image_dir / name))
                rows.append({
                    "path": f"{IMAGE_DIR}/{name}",
                    "label": epoch.stage,
                    "class_name": class_names[epoch.stage],
                    "source_id": epoch.source_id,
                    "synthetic": False,
                })
            manifest_path = manifest.add_file(write_manifest(rows, self.output_dir / MANIFEST_NAME))
            manifest.add_file(write_class_distribution([r["label"] for r in rows], class_names,
                                                       self.output_dir / DISTRIBUTION_NAME))

        logger.info(f"event=convert_done images={len(rows)} failed_recordings={len(failed)}")
        return ConversionResult(rows, failed, manifest_path, manifest.write())
