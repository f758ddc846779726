"""
Run manifests: configuration snapshot, seeds, content hashes and timings of
every artifact a command produced.
"""
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone as tz
from pathlib import Path

from app.config import config_to_dict
from app.errors import DatasetError

logger = logging.getLogger(__name__)

RUN_MANIFEST_NAME = "run_manifest.json"


def sha256_file(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """Collects produced files and timings for one command invocation."""

    def __init__(self, command, config, output_dir):
        """
        Args:
            command (str): CLI command name.
            config (PipelineConfig): Effective configuration.
            output_dir (str | Path): Directory all recorded paths are relative to.
        """
        self.command = command
        self.config = config
        self.output_dir = Path(output_dir)
        self.files = {}
        self.timings = {}
        self.started = datetime.now(tz.utc)

    @property
    def seeds(self):
        return {
            "train": self.config.train.seed,
            "model": self.config.model.seed,
            "sampler": self.config.sampler.seed,
            "layout": self.config.layout.seed,
        }

    def add_file(self, path):
        path = Path(path)
        key = path.resolve().relative_to(self.output_dir.resolve()).as_posix()
        self.files[key] = sha256_file(path)
        return path

    def add_files(self, paths):
        for path in paths:
            self.add_file(path)

    @contextmanager
    def timed(self, step):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[step] = round(time.perf_counter() - start, 6)
            logger.info(f"event=step_done command={self.command} step={step} seconds={self.timings[step]:.3f}")

    def to_dict(self):
        return {
            "command": self.command,
            "started": self.started.isoformat(),
            "config": config_to_dict(self.config),
            "seeds": self.seeds,
            "files": dict(sorted(self.files.items())),
            "timings": self.timings,
        }

    def write(self):
        path = self.output_dir / RUN_MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"event=run_manifest_written path={path} files={len(self.files)}")
        return path


def verify_manifest(path):
    """
    Re-hash every file listed in a run manifest.

    Returns:
        list: relative paths that are missing or whose hash changed; empty when all verify.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Run manifest not found: {path}")
    recorded = json.loads(path.read_text(encoding="utf-8"))["files"]
    failures = []
    for relative, digest in sorted(recorded.items()):
        target = path.parent / relative
        if not target.exists() or sha256_file(target) != digest:
            failures.append(relative)
    if failures:
        logger.warning(f"event=run_manifest_mismatch path={path} files={len(failures)}")
    return failures
