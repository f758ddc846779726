"""
Channel selection, resampling and cutting of annotated fixed-length epochs.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.errors import ChannelSelectionError, ConfigError, DatasetError
from app.signals.edf import SampledSignal, read_edf
from app.signals.annotations import parse_tal_records, read_annotations
from app.signals.presets import EXCLUDE

logger = logging.getLogger(__name__)

_INTEGER_TOLERANCE = 1e-9


@dataclass
class TimeSeriesEpoch:
    samples: np.ndarray
    stage: int
    source_id: str = ""
    index: int = 0
    onset_s: float = 0.0

    @property
    def n_samples(self):
        return len(self.samples)


def select_channel(signals, name):
    """
    Pick the one signal whose label matches ``name`` (trimmed, case-insensitive).

    Raises:
        ChannelSelectionError: zero or several matches.
    """
    wanted = name.strip().lower()
    labels = [s.channel for s in signals]
    matches = [s for s in signals if s.channel.strip().lower() == wanted]
    if not matches:
        raise ChannelSelectionError(f"No channel named {name!r}", labels)
    if len(matches) > 1:
        raise ChannelSelectionError(f"Channel name {name!r} is ambiguous ({len(matches)} matches)", labels)
    return matches[0]


def resample(signal, target_hz):
    """
    Linearly interpolate onto the grid t_k = k / target_hz over the signal's span.

    This is plain linear interpolation without an anti-aliasing filter.
    """
    if target_hz <= 0:
        raise ConfigError(f"Target rate must be positive, got {target_hz}")
    n = len(signal.samples)
    if n == 0:
        raise DatasetError(f"Cannot resample empty signal '{signal.channel}'")
    if target_hz == signal.rate_hz:
        return SampledSignal(signal.channel, signal.rate_hz, np.array(signal.samples, dtype=np.float64))

    n_out = int(math.floor((n - 1) * target_hz / signal.rate_hz + _INTEGER_TOLERANCE)) + 1
    source_t = np.arange(n) / signal.rate_hz
    target_t = np.arange(n_out) / target_hz
    samples = np.interp(target_t, source_t, np.asarray(signal.samples, dtype=np.float64))
    logger.debug(f"event=resampled channel={signal.channel!r} from_hz={signal.rate_hz} to_hz={target_hz} n={n_out}")
    return SampledSignal(signal.channel, float(target_hz), samples)


def crop(signal, start_s=0.0, stop_s=None):
    """Keep samples with start_s <= t < stop_s."""
    start = max(0, int(math.ceil(start_s * signal.rate_hz - _INTEGER_TOLERANCE)))
    stop = len(signal.samples) if stop_s is None else int(math.floor(stop_s * signal.rate_hz + _INTEGER_TOLERANCE))
    return SampledSignal(signal.channel, signal.rate_hz, np.asarray(signal.samples[start:max(start, stop)]))


def epoch_length(epoch_s, rate_hz):
    """Samples per epoch; the product must be a whole number."""
    n = epoch_s * rate_hz
    if n <= 0 or abs(n - round(n)) > _INTEGER_TOLERANCE * max(1.0, abs(n)):
        raise ConfigError(f"epoch_s x rate_hz = {epoch_s} x {rate_hz} is not a positive whole number of samples")
    return int(round(n))


def _first_sample(onset_s, rate_hz):
    position = onset_s * rate_hz
    nearest = round(position)
    if abs(position - nearest) <= _INTEGER_TOLERANCE * max(1.0, abs(position)):
        return int(nearest)
    return int(math.ceil(position))


def _end_sample(end_s, rate_hz):
    """Exclusive sample bound of a span ending at ``end_s``."""
    position = end_s * rate_hz
    nearest = round(position)
    if abs(position - nearest) <= _INTEGER_TOLERANCE * max(1.0, abs(position)):
        return int(nearest)
    return int(math.floor(position))


def extract_epochs(signal, annotations, epoch_s, stage_map, source_id="") -> List[TimeSeriesEpoch]:
    """
    Cut non-overlapping windows of ``epoch_s`` seconds fully inside annotation spans.

    Windows mapped to EXCLUDE, windows with unknown labels and partial trailing
    windows are dropped.

    Args:
        signal (SampledSignal): Channel at its final sampling rate.
        annotations (list): SleepAnnotation sorted by onset.
        epoch_s (float): Window length in seconds.
        stage_map (StageMap): Label to class mapping.
        source_id (str): Recording identifier stored on each epoch.

    Returns:
        list: TimeSeriesEpoch in time order.
    """
    n = epoch_length(epoch_s, signal.rate_hz)
    samples = np.asarray(signal.samples, dtype=np.float64)
    epochs = []
    last_end = 0
    excluded = 0
    unknown = set()

    for annotation in sorted(annotations, key=lambda a: a.onset_s):
        stage = stage_map.lookup(annotation.stage_label)
        windows = int(math.floor(annotation.duration_s / epoch_s + _INTEGER_TOLERANCE))
        if stage is None:
            unknown.add(annotation.stage_label)
            continue
        if stage == EXCLUDE:
            excluded += windows
            continue
        span_end = _end_sample(annotation.onset_s + annotation.duration_s, signal.rate_hz)
        for w in range(windows):
            start = _first_sample(annotation.onset_s + w * epoch_s, signal.rate_hz)
            if start < last_end:
                continue
            # off-grid onsets can push the last window past the annotation
            if start + n > span_end:
                break
            if start + n > len(samples):
                break
            epochs.append(TimeSeriesEpoch(
                samples=samples[start:start + n].copy(),
                stage=int(stage),
                source_id=source_id,
                index=len(epochs),
                onset_s=start / signal.rate_hz,
            ))
            last_end = start + n

    if unknown:
        logger.warning(f"event=unknown_stage_labels source={source_id!r} labels={sorted(unknown)!r}")
    logger.info(f"event=epochs_extracted source={source_id!r} kept={len(epochs)} excluded={excluded} n={n}")
    return epochs


def read_recording(psg_path, hypnogram_path=None):
    """
    Load all signals of a recording and its sleep annotations.

    Annotations come from ``hypnogram_path`` (EDF+ or text table) when given,
    otherwise from the recording's own "EDF Annotations" signal.

    Returns:
        tuple: (list of plain SampledSignal, list of SleepAnnotation)
    """
    _, signals = read_edf(psg_path)
    if hypnogram_path is not None:
        annotations = read_annotations(hypnogram_path)
    else:
        records = [r for s in signals if s.is_annotation for r in s.tal_records]
        annotations = parse_tal_records(records)
    return [s for s in signals if not s.is_annotation], annotations


def recording_epochs(psg_path, hypnogram_path, preset, epoch_s, resample_hz=None,
                     crop_s: Optional[float] = None, source_id=None):
    """
    Apply the first half of the conversion pipeline to one recording.

    Reads the file, selects the preset channel, optionally crops and resamples,
    and cuts labelled epochs.
    """
    signals, annotations = read_recording(psg_path, hypnogram_path)
    signal = select_channel(signals, preset.channel)
    if crop_s is not None:
        signal = crop(signal, 0.0, crop_s)
    if resample_hz is not None:
        signal = resample(signal, resample_hz)
    return extract_epochs(signal, annotations, epoch_s, preset.stage_map, source_id or "")
