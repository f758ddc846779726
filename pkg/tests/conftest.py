import os
from datetime import datetime

import hypothesis
import numpy as np
import pytest

from app.nn.model import ModelConfig
from app.signals.annotations import SleepAnnotation, encode_tal_records
from app.signals.edf import (ANNOTATION_LABEL, EdfHeader, SampledSignal, SignalHeader, make_header,
                             write_edf_file)

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=1000, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.environ.get("SLEEPFDL_HYPOTHESIS_PROFILE", "ci"))

SYNTHETIC_CLASSES = ("sine", "chirp", "noise")
SYNTHETIC_RATE = 32.0
SYNTHETIC_EPOCH_S = 1.0


def synthetic_epoch(kind, n, rng):
    """One epoch of a sine, chirp or noise waveform in microvolts."""
    t = np.arange(n) / n
    if kind == "sine":
        values = np.sin(2 * np.pi * 3 * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        values = np.sin(2 * np.pi * (1 + 6 * t) * t)
    else:
        values = rng.normal(size=n)
    return 50.0 * values + rng.normal(scale=0.5, size=n)


def tiny_model_config(**overrides):
    """12x12 input network small enough for finite-difference checks."""
    values = dict(
        n_classes=3,
        input_side=12,
        conv_channels=(2, 3, 4, 4),
        dilations=(1, 1, 2, 2),
        pool_after=(False, True, False, False),
        lsfe_fc=(6, 6),
        dropout=0.0,
        heads=3,
        g2a_fc=(5, 4),
        batch_size=4,
        dtype="float64",
        seed=13,
    )
    values.update(overrides)
    return ModelConfig(**values)


def write_recording(directory, name, stages, rng, separate_hypnogram=True, channel="EEG Fz"):
    """
    Write a PSG EDF whose consecutive epochs follow ``stages``.

    Annotations go into ``<name>-Hypnogram.edf`` when ``separate_hypnogram``
    is set, otherwise into an "EDF Annotations" signal of the PSG file.

    Returns:
        tuple: (psg path, hypnogram path or None)
    """
    n = int(SYNTHETIC_RATE * SYNTHETIC_EPOCH_S)
    samples = np.concatenate([synthetic_epoch(kind if kind in SYNTHETIC_CLASSES else "noise", n, rng)
                              for kind in stages])
    eeg = SampledSignal(channel, SYNTHETIC_RATE, samples)
    annotations = [SleepAnnotation(i * SYNTHETIC_EPOCH_S, SYNTHETIC_EPOCH_S, stage) for i, stage in enumerate(stages)]
    start = datetime(2001, 2, 3, 4, 5, 6)

    header = make_header([eeg], record_duration_s=SYNTHETIC_EPOCH_S, start=start, reserved="EDF+C")
    signals = [eeg]
    tal = encode_tal_records(annotations)
    record_bytes = len(tal) + (len(tal) % 2)
    if not separate_hypnogram:
        records = [encode_tal_records(annotations, record_bytes)]
        records += [f"+{r}\x14\x14\x00".encode().ljust(record_bytes, b"\x00") for r in range(1, header.n_records)]
        header.signals.append(SignalHeader(ANNOTATION_LABEL, -1.0, 1.0, samples_per_record=record_bytes // 2))
        signals.append(SampledSignal(ANNOTATION_LABEL, record_bytes // 2, np.zeros(0), tal_records=records))
    psg = write_edf_file(directory / f"{name}-PSG.edf", header, signals)
    if not separate_hypnogram:
        return psg, None

    hyp_header = EdfHeader(start=start, n_records=1, record_duration_s=0.0, reserved="EDF+C",
                           signals=[SignalHeader(ANNOTATION_LABEL, -1.0, 1.0, samples_per_record=record_bytes // 2)])
    hyp_signal = SampledSignal(ANNOTATION_LABEL, 1.0, np.zeros(0), tal_records=[encode_tal_records(annotations, record_bytes)])
    hypnogram = write_edf_file(directory / f"{name}-Hypnogram.edf", hyp_header, [hyp_signal])
    return psg, hypnogram


@pytest.fixture
def rng():
    return np.random.default_rng(13)


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def recording_factory(tmp_path, rng):
    def factory(name, stages, separate_hypnogram=True):
        return write_recording(tmp_path, name, stages, rng, separate_hypnogram)
    return factory


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar ``f()`` with respect to array ``x``, perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + h
        up = f()
        x[idx] = saved - h
        down = f()
        x[idx] = saved
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))


@pytest.fixture
def numeric_gradient():
    return central_difference
