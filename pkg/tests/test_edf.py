from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from app.errors import AnnotationParseError, ChannelSelectionError, ConfigError, EdfParseError
from app.signals.annotations import (SleepAnnotation, encode_tal_records, parse_annotations,
                                     read_annotations)
from app.signals.edf import (EdfHeader, SampledSignal, SignalHeader, digital_to_physical, make_header,
                             parse_edf, physical_to_digital, write_edf)
from app.signals.epochs import crop, epoch_length, extract_epochs, read_recording, recording_epochs, resample, \
    select_channel
from app.signals.presets import EXCLUDE, PRESETS, StageMap, get_preset, normalize_label


def _signal_header(label, spr, pmin=-100.0, pmax=100.0):
    return SignalHeader(label, pmin, pmax, samples_per_record=spr)


@st.composite
def edf_fixtures(draw):
    n_records = draw(st.integers(1, 4))
    sprs = draw(st.lists(st.integers(1, 16), min_size=1, max_size=3))
    signals, headers = [], []
    for i, spr in enumerate(sprs):
        digital = draw(hnp.arrays(np.int16, n_records * spr))
        headers.append(_signal_header(f"EEG {i}", spr, pmin=-float(i + 1) * 10, pmax=float(i + 2) * 7))
        signals.append(SampledSignal(f"EEG {i}", float(spr), digital_to_physical(digital, headers[-1]),
                                     digital=digital))
    header = EdfHeader(patient_id="X F 01-JAN-1970 Patient", recording_id="Startdate 03-FEB-2001",
                       start=datetime(2001, 2, 3, 4, 5, 6), n_records=n_records, record_duration_s=1.0,
                       signals=headers)
    return header, signals


@given(edf_fixtures())
def test_write_then_parse_is_bit_exact(fixture):
    header, signals = fixture
    data = write_edf(header, signals)
    parsed_header, parsed = parse_edf(data)
    assert write_edf(parsed_header, parsed) == data
    assert parsed_header.start == header.start
    for original, again in zip(signals, parsed):
        np.testing.assert_array_equal(original.digital, again.digital)
        assert again.rate_hz == original.rate_hz


def test_physical_digital_mapping_hits_the_range_ends():
    sh = _signal_header("EEG", 1, pmin=-200.0, pmax=200.0)
    np.testing.assert_allclose(digital_to_physical([sh.digital_min, sh.digital_max], sh), [-200.0, 200.0])
    np.testing.assert_array_equal(physical_to_digital([-200.0, 200.0, 1e9], sh),
                                  [sh.digital_min, sh.digital_max, sh.digital_max])


def test_written_file_sizes_follow_the_container_layout():
    assert len(write_edf(EdfHeader(), [])) == 256
    eeg = SampledSignal("EEG Fpz-Cz", 100.0, np.sin(np.arange(3000) / 50.0))
    data = write_edf(make_header([eeg], record_duration_s=30.0), [eeg])
    assert len(data) == 512 + 6000
    header, parsed = parse_edf(data)
    assert header.n_records == 1 and len(parsed[0].samples) == 3000


def test_truncated_records_report_byte_offset():
    eeg = SampledSignal("EEG", 4.0, np.linspace(-1, 1, 12))
    data = write_edf(make_header([eeg]), [eeg])
    with pytest.raises(EdfParseError) as info:
        parse_edf(data[:-3])
    assert info.value.offset is not None
    assert "declares 3" in str(info.value)


def test_bad_version_and_short_files_are_rejected():
    eeg = SampledSignal("EEG", 2.0, np.zeros(4) + np.arange(4))
    data = bytearray(write_edf(make_header([eeg]), [eeg]))
    with pytest.raises(EdfParseError):
        parse_edf(bytes(data[:100]))
    data[0:1] = b"9"
    with pytest.raises(EdfParseError) as info:
        parse_edf(bytes(data))
    assert info.value.offset == 0


def test_tal_decoding_matches_hand_built_record():
    record = (b"+0\x14\x14\x00"
              b"+0\x1530\x14Sleep stage W\x14\x00"
              b"+30\x1560\x14Sleep stage 1\x14\x00"
              b"+90.5\x14Lights off\x14Marker\x14\x00"
              b"\x00\x00\x00")
    annotations = parse_annotations(record)
    assert annotations == [
        SleepAnnotation(0.0, 30.0, "Sleep stage W"),
        SleepAnnotation(30.0, 60.0, "Sleep stage 1"),
        SleepAnnotation(90.5, 0.0, "Lights off"),
        SleepAnnotation(90.5, 0.0, "Marker"),
    ]


@pytest.mark.parametrize("record", [
    b"+0\x1530\x14W",
    b"0\x1530\x14W\x14\x00",
    b"+0\x15abc\x14W\x14\x00",
])
def test_malformed_tal_raises(record):
    with pytest.raises(AnnotationParseError):
        parse_annotations(record)


def test_encoded_tal_records_decode_back():
    annotations = [SleepAnnotation(0.0, 30.0, "Sleep stage 2"), SleepAnnotation(30.0, 90.0, "Sleep stage R")]
    assert parse_annotations([encode_tal_records(annotations, 128)]) == annotations


def test_annotation_table_with_header_and_comments():
    text = "onset,duration,label\n# comment\n0,30,W\n30,30,N1\n"
    assert parse_annotations(text) == [SleepAnnotation(0, 30, "W"), SleepAnnotation(30, 30, "N1")]


def test_annotation_table_file(tmp_path):
    path = tmp_path / "hyp.txt"
    path.write_text("0\t30\tSleep stage W\n", encoding="utf-8")
    assert read_annotations(path) == [SleepAnnotation(0, 30, "Sleep stage W")]


def test_select_channel_is_case_insensitive_and_lists_labels():
    signals = [SampledSignal("EEG Fpz-Cz", 100.0, np.zeros(1)), SampledSignal("EOG", 100.0, np.zeros(1))]
    assert select_channel(signals, " eeg fpz-cz ").channel == "EEG Fpz-Cz"
    with pytest.raises(ChannelSelectionError) as info:
        select_channel(signals, "EMG")
    assert info.value.available == ["EEG Fpz-Cz", "EOG"]
    with pytest.raises(ChannelSelectionError):
        select_channel(signals + [SampledSignal("eog", 1.0, np.zeros(1))], "EOG")


def test_resample_identity_and_halving():
    signal = SampledSignal("EEG", 4.0, np.arange(8, dtype=float))
    np.testing.assert_array_equal(resample(signal, 4.0).samples, signal.samples)
    halved = resample(signal, 2.0)
    assert halved.rate_hz == 2.0
    np.testing.assert_allclose(halved.samples, [0, 2, 4, 6])
    with pytest.raises(ConfigError):
        resample(signal, 0)


def test_crop_keeps_leading_seconds():
    signal = SampledSignal("EEG", 10.0, np.arange(100, dtype=float))
    assert len(crop(signal, 0.0, 2.5).samples) == 25


def test_epoch_length_requires_whole_samples():
    assert epoch_length(30.0, 100.0) == 3000
    with pytest.raises(ConfigError):
        epoch_length(0.15, 10.0)


def test_extract_epochs_drops_excluded_unknown_and_partial_windows():
    stage_map = StageMap(("W", "1"), excluded=("M",))
    signal = SampledSignal("EEG", 2.0, np.arange(20, dtype=float))
    annotations = [
        SleepAnnotation(0, 4, "Sleep stage W"),
        SleepAnnotation(4, 2, "Movement"),
        SleepAnnotation(6, 2, "M"),
        SleepAnnotation(8, 4, "Sleep stage 1"),
    ]
    epochs = extract_epochs(signal, annotations, 2.0, stage_map, "rec")
    assert [e.stage for e in epochs] == [0, 0, 1]
    np.testing.assert_array_equal(epochs[2].samples, [16, 17, 18, 19])
    assert [e.index for e in epochs] == [0, 1, 2]

    tail = extract_epochs(signal, [SleepAnnotation(8, 6, "W")], 2.0, stage_map)
    assert len(tail) == 1


def test_off_grid_onsets_keep_windows_inside_the_annotation():
    stage_map = StageMap(("W",))
    signal = SampledSignal("EEG", 10.0, np.arange(40, dtype=float))
    # the span covers samples 0.5 to 20.5; a second 10-sample window would end at 21
    epochs = extract_epochs(signal, [SleepAnnotation(0.05, 2.0, "W")], 1.0, stage_map)
    assert len(epochs) == 1
    np.testing.assert_array_equal(epochs[0].samples, np.arange(1, 11))
    on_grid = extract_epochs(signal, [SleepAnnotation(0.1, 2.0, "W")], 1.0, stage_map)
    assert [e.samples[0] for e in on_grid] == [1, 11]


def test_presets_normalise_labels():
    edfx = PRESETS["EDFX"].stage_map
    assert edfx.lookup("Sleep stage W") == 0
    assert edfx.lookup("Sleep stage ?") == 6
    assert edfx.lookup("Movement time") == EXCLUDE
    assert edfx.lookup("Lights off") is None
    assert normalize_label("  Sleep stage R ") == "r"
    assert get_preset("hmc").channel == "EEG C3-M2"
    with pytest.raises(ConfigError):
        get_preset("custom")


@pytest.mark.parametrize("separate", [True, False])
def test_read_recording_finds_annotations(recording_factory, separate):
    psg, hypnogram = recording_factory("rec", ["sine", "chirp", "noise"], separate_hypnogram=separate)
    signals, annotations = read_recording(psg, hypnogram)
    assert [s.channel for s in signals] == ["EEG Fz"]
    assert [a.stage_label for a in annotations] == ["sine", "chirp", "noise"]

    preset = get_preset("custom", class_names=["sine", "chirp", "noise"], channel="EEG Fz")
    epochs = recording_epochs(psg, hypnogram, preset, 1.0, source_id="rec")
    assert [e.stage for e in epochs] == [0, 1, 2]
    assert all(e.n_samples == 32 for e in epochs)
