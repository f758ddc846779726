"""
Configuration module for the conversion and training pipeline.

Precedence, lowest first: dataclass defaults, dataset preset defaults, the
JSON config file, command-line overrides.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from dotenv import load_dotenv
from joblib import cpu_count

from app.errors import ConfigError
from app.graphs.layout import LayoutConfig
from app.graphs.raster import RenderConfig
from app.nn.model import ModelConfig
from app.nn.training import TrainConfig
from app.sampling.sampling import SamplerConfig
from app.signals.presets import get_preset

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

CONFIG_PATH = os.environ.get("SLEEPFDL_CONFIG")
LOG_LEVEL = os.environ.get("SLEEPFDL_LOG_LEVEL", "INFO").upper()
DEFAULT_JOBS = int(os.environ.get("SLEEPFDL_JOBS") or cpu_count())

BATCH_SIZES = (32, 64, 128, 256, 512, 1024)
EVAL_TARGETS = ("original", "balanced")
CV_MODES = ("holdout", "kfold")


@dataclass
class EpochingConfig:
    preset: str = "EDFX"
    channel: Optional[str] = None
    epoch_s: float = 30.0
    resample_hz: Optional[float] = None
    crop_s: Optional[float] = None
    class_names: Optional[Tuple[str, ...]] = None
    excluded: Optional[Tuple[str, ...]] = None

    def preset_definition(self):
        return get_preset(self.preset, self.class_names, self.excluded, self.channel)

    def validate(self):
        problems = []
        if not self.epoch_s > 0:
            problems.append(f"epoching.epoch_s must be > 0 (got {self.epoch_s})")
        if self.resample_hz is not None and not self.resample_hz > 0:
            problems.append(f"epoching.resample_hz must be > 0 (got {self.resample_hz})")
        if self.crop_s is not None and not self.crop_s > 0:
            problems.append(f"epoching.crop_s must be > 0 (got {self.crop_s})")
        try:
            self.preset_definition()
        except ConfigError as e:
            problems.append(str(e))
        return problems


@dataclass
class PathsConfig:
    output_dir: str = "runs"

    def validate(self):
        return [] if self.output_dir else ["paths.output_dir must not be empty"]


@dataclass
class PipelineConfig:
    epoching: EpochingConfig = field(default_factory=EpochingConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    jobs: int = DEFAULT_JOBS
    balance_first: bool = False
    eval_on: str = "original"
    cv_mode: str = "holdout"


def config_to_dict(config):
    """JSON-ready snapshot; ``config_from_dict`` rebuilds an equal config."""
    return json.loads(json.dumps(asdict(config)))


def _merge(target, values, prefix, unknown):
    for key, value in values.items():
        if key not in target:
            unknown.append(prefix + key)
        elif isinstance(target[key], dict) and isinstance(value, dict):
            _merge(target[key], value, f"{prefix}{key}.", unknown)
        else:
            target[key] = value


SECTIONS = {
    "epoching": EpochingConfig,
    "layout": LayoutConfig,
    "render": RenderConfig,
    "sampler": SamplerConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "paths": PathsConfig,
}


def _tuples(values):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}


def _build(values):
    sections = {name: cls(**_tuples(values[name])) for name, cls in SECTIONS.items()}
    scalars = {k: v for k, v in values.items() if k not in SECTIONS}
    return PipelineConfig(**sections, **scalars)


def _dotted(overrides):
    nested = {}
    for key, value in overrides.items():
        if value is None:
            continue
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return nested


def config_from_dict(data, overrides=None):
    """
    Build a PipelineConfig from nested values and dotted overrides.

    Raises:
        ConfigError: unknown keys or invalid values, all listed at once.
    """
    merged = asdict(PipelineConfig())
    unknown = []
    _merge(merged, data or {}, "", unknown)
    _merge(merged, _dotted(overrides or {}), "", unknown)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")
    flat = [name for name in SECTIONS if not isinstance(merged[name], dict)]
    if flat:
        raise ConfigError(f"Configuration sections must be objects: {', '.join(flat)}")

    explicit = {**(data or {}).get("model", {}), **_dotted(overrides or {}).get("model", {})}
    if "n_classes" not in explicit:
        try:
            epoching = EpochingConfig(**_tuples(merged["epoching"]))
            merged["model"]["n_classes"] = epoching.preset_definition().stage_map.n_classes
        except (ConfigError, TypeError):
            pass
    merged["model"]["batch_size"] = merged["train"]["batch_size"]

    try:
        config = _build(merged)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    validate_config(config)
    return config


def load_config(path=None, overrides=None):
    """
    Load the pipeline configuration.

    Args:
        path (str | Path): JSON config file; defaults to $SLEEPFDL_CONFIG when set.
        overrides (dict): Dotted keys such as ``train.epochs``; None values are ignored.

    Returns:
        PipelineConfig: Validated configuration.
    """
    path = path or CONFIG_PATH
    data = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        logger.info(f"event=config_loaded path={path}")
    return config_from_dict(data, overrides)


def validate_config(config):
    """Validate that every nested configuration value is usable."""
    problems = []
    for section in (config.epoching, config.layout, config.render, config.sampler,
                    config.model, config.train, config.paths):
        problems.extend(section.validate())
    if config.render.side != config.model.input_side:
        problems.append(f"render.side {config.render.side} differs from model.input_side {config.model.input_side}")
    if config.jobs < 1:
        problems.append(f"jobs must be >= 1 (got {config.jobs})")
    if config.eval_on not in EVAL_TARGETS:
        problems.append(f"eval_on must be one of {', '.join(EVAL_TARGETS)} (got {config.eval_on!r})")
    if config.cv_mode not in CV_MODES:
        problems.append(f"cv_mode must be one of {', '.join(CV_MODES)} (got {config.cv_mode!r})")

    if problems:
        raise ConfigError(f"Invalid configuration: {'; '.join(problems)}")
