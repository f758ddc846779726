"""
EDF/EDF+ container reading and writing.

The layout is a 256-byte ASCII main header, 256 bytes of ASCII header per
signal, then data records holding 16-bit little-endian two's-complement
samples, signal after signal.
"""
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.errors import EdfParseError, ShapeError

logger = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"
MAIN_HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256

# (name, width) of every per-signal header field, in file order
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass
class SignalHeader:
    """Per-signal header block."""
    label: str
    physical_min: float
    physical_max: float
    digital_min: int = -32768
    digital_max: int = 32767
    samples_per_record: int = 0
    transducer: str = ""
    physical_dimension: str = "uV"
    prefiltering: str = ""
    reserved: str = ""

    @property
    def is_annotation(self):
        return self.label.strip() == ANNOTATION_LABEL

    @property
    def gain(self):
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def validate(self, offset=None):
        if self.is_annotation:
            return
        if not self.digital_min < self.digital_max:
            raise EdfParseError(
                f"Signal '{self.label}': digital_min {self.digital_min} must be below digital_max {self.digital_max}",
                offset,
            )
        if self.physical_min == self.physical_max:
            raise EdfParseError(f"Signal '{self.label}': physical_min equals physical_max", offset)


@dataclass
class EdfHeader:
    """Main header block plus the signal headers it announces."""
    patient_id: str = ""
    recording_id: str = ""
    start: datetime = field(default_factory=lambda: datetime(2000, 1, 1))
    n_records: int = 0
    record_duration_s: float = 1.0
    signals: List[SignalHeader] = field(default_factory=list)
    version: str = "0"
    reserved: str = ""

    @property
    def header_bytes(self):
        return MAIN_HEADER_BYTES + SIGNAL_HEADER_BYTES * len(self.signals)

    @property
    def record_samples(self):
        return sum(s.samples_per_record for s in self.signals)

    @property
    def is_edf_plus(self):
        return self.reserved.startswith("EDF+")


@dataclass
class SampledSignal:
    """
    One channel in physical units.

    Annotation channels keep their raw per-record TAL bytes in ``tal_records``
    and carry no samples.
    """
    channel: str
    rate_hz: float
    samples: np.ndarray
    digital: Optional[np.ndarray] = None
    tal_records: Optional[List[bytes]] = None

    @property
    def is_annotation(self):
        return self.tal_records is not None

    @property
    def duration_s(self):
        return len(self.samples) / self.rate_hz


def digital_to_physical(digital, header):
    """Affine map phys = pmin + (dig - dmin) * (pmax - pmin) / (dmax - dmin)."""
    digital = np.asarray(digital, dtype=np.float64)
    return header.physical_min + (digital - header.digital_min) * header.gain


def physical_to_digital(physical, header):
    """Inverse of digital_to_physical, rounded and clipped to the digital range."""
    physical = np.asarray(physical, dtype=np.float64)
    digital = np.rint((physical - header.physical_min) / header.gain + header.digital_min)
    return np.clip(digital, header.digital_min, header.digital_max).astype(np.int16)


class _HeaderReader:
    """Sequential reader over the ASCII header that tracks the byte offset."""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def text(self, width):
        start = self.offset
        chunk = self.data[start:start + width]
        if len(chunk) != width:
            raise EdfParseError(f"Header truncated: expected {width} bytes", start)
        self.offset += width
        try:
            return chunk.decode("ascii").strip()
        except UnicodeDecodeError:
            raise EdfParseError("Header field is not ASCII", start)

    def number(self, width, kind=float):
        start = self.offset
        raw = self.text(width)
        try:
            return kind(raw) if kind is float else int(float(raw))
        except ValueError:
            raise EdfParseError(f"Non-numeric header field {raw!r}", start)


def _parse_start(date_text, time_text, offset):
    try:
        day, month, year = (int(x) for x in date_text.split("."))
        hour, minute, second = (int(x) for x in time_text.split("."))
    except ValueError:
        raise EdfParseError(f"Invalid start date/time {date_text!r} {time_text!r}", offset)
    # EDF clipping date: two-digit years 85-99 belong to the 1900s
    year += 1900 if year >= 85 else 2000
    try:
        return datetime(year, month, day, hour, minute, second)
    except ValueError as e:
        raise EdfParseError(f"Invalid start date/time: {e}", offset)


def parse_edf_header(data):
    """
    Parse the main and signal headers.

    Args:
        data (bytes): File contents (at least the full header).

    Returns:
        EdfHeader: Parsed header.
    """
    if len(data) < MAIN_HEADER_BYTES:
        raise EdfParseError(f"File too short for an EDF header ({len(data)} bytes)", len(data))

    reader = _HeaderReader(data)
    version = reader.text(8)
    if version != "0":
        raise EdfParseError(f"Unsupported EDF version {version!r}", 0)
    patient_id = reader.text(80)
    recording_id = reader.text(80)
    date_offset = reader.offset
    start = _parse_start(reader.text(8), reader.text(8), date_offset)
    header_bytes_offset = reader.offset
    header_bytes = reader.number(8, int)
    reserved = reader.text(44)
    n_records = reader.number(8, int)
    duration_offset = reader.offset
    record_duration_s = reader.number(8)
    ns_offset = reader.offset
    n_signals = reader.number(4, int)

    if n_signals < 0:
        raise EdfParseError(f"Negative signal count {n_signals}", ns_offset)
    if header_bytes != MAIN_HEADER_BYTES + SIGNAL_HEADER_BYTES * n_signals:
        raise EdfParseError(
            f"Header size {header_bytes} does not match 256 + 256 x {n_signals} signals",
            header_bytes_offset,
        )
    if len(data) < header_bytes:
        raise EdfParseError(f"Signal headers truncated: expected {header_bytes} bytes", len(data))

    columns = {}
    offsets = {}
    for name, width in _SIGNAL_FIELDS:
        offsets[name] = reader.offset
        if name in ("physical_min", "physical_max"):
            columns[name] = [reader.number(width) for _ in range(n_signals)]
        elif name in ("digital_min", "digital_max", "samples_per_record"):
            columns[name] = [reader.number(width, int) for _ in range(n_signals)]
        else:
            columns[name] = [reader.text(width) for _ in range(n_signals)]

    signals = []
    for i in range(n_signals):
        signal = SignalHeader(**{name: columns[name][i] for name, _ in _SIGNAL_FIELDS})
        signal.validate(offsets["label"] + 16 * i)
        signals.append(signal)

    annotation_only = bool(signals) and all(s.is_annotation for s in signals)
    if record_duration_s < 0 or (record_duration_s == 0 and not annotation_only):
        raise EdfParseError(f"Invalid record duration {record_duration_s}", duration_offset)

    return EdfHeader(
        patient_id=patient_id,
        recording_id=recording_id,
        start=start,
        n_records=n_records,
        record_duration_s=record_duration_s,
        signals=signals,
        version=version,
        reserved=reserved,
    )


def parse_edf(data) -> Tuple[EdfHeader, List[SampledSignal]]:
    """
    Parse an EDF/EDF+ file into its header and per-signal sample arrays.

    Args:
        data (bytes): Complete file contents.

    Returns:
        tuple: (EdfHeader, list of SampledSignal in header order)
    """
    header = parse_edf_header(data)
    record_bytes = 2 * header.record_samples
    payload = data[header.header_bytes:]

    if record_bytes == 0:
        n_records = max(header.n_records, 0)
        records = np.zeros((n_records, 0), dtype="<i2")
    else:
        available = len(payload) // record_bytes
        expected = header.n_records if header.n_records >= 0 else available
        if available < expected:
            raise EdfParseError(
                f"Truncated data records: header declares {expected}, file holds {available}",
                header.header_bytes + available * record_bytes,
            )
        if header.n_records < 0:
            logger.warning(f"event=edf_unknown_record_count inferred={available}")
        n_records = expected
        records = np.frombuffer(payload, dtype="<i2", count=n_records * header.record_samples)
        records = records.reshape(n_records, header.record_samples)
    header = replace(header, n_records=n_records)

    signals = []
    column = 0
    for sh in header.signals:
        block = records[:, column:column + sh.samples_per_record]
        column += sh.samples_per_record
        duration = header.record_duration_s
        rate_hz = sh.samples_per_record / duration if duration > 0 else float(sh.samples_per_record)
        if sh.is_annotation:
            raw = block.astype("<i2").tobytes()
            width = 2 * sh.samples_per_record
            tal_records = [raw[r * width:(r + 1) * width] for r in range(n_records)]
            signals.append(SampledSignal(sh.label, rate_hz, np.zeros(0), tal_records=tal_records))
        else:
            digital = np.ascontiguousarray(block).reshape(-1).astype(np.int16)
            signals.append(SampledSignal(sh.label, rate_hz, digital_to_physical(digital, sh), digital=digital))

    logger.debug(f"event=edf_parsed signals={len(signals)} records={n_records}")
    return header, signals


def _format_number(value, width):
    if float(value).is_integer():
        text = str(int(value))
    else:
        text = repr(float(value))
        if len(text) > width:
            for precision in range(width, -1, -1):
                text = f"{value:.{precision}f}".rstrip("0").rstrip(".")
                if len(text) <= width:
                    break
    if len(text) > width:
        raise ShapeError(f"Value {value!r} does not fit a {width}-character header field")
    return text


def _field(text, width):
    encoded = str(text).encode("ascii", errors="replace")[:width]
    return encoded.ljust(width, b" ")


def write_edf(header, signals):
    """
    Serialise a header and its signals into EDF bytes.

    Signals with ``digital`` samples are written verbatim; otherwise physical
    samples are quantised with the signal header's gain. Annotation signals
    are written from their ``tal_records``.

    Args:
        header (EdfHeader): Header describing the signals.
        signals (list): SampledSignal per header signal, same order.

    Returns:
        bytes: EDF file contents.
    """
    if len(signals) != len(header.signals):
        raise ShapeError("Signal count differs from header", (len(signals),), (len(header.signals),))

    start = header.start
    out = bytearray()
    out += _field(header.version, 8)
    out += _field(header.patient_id, 80)
    out += _field(header.recording_id, 80)
    out += _field(f"{start.day:02d}.{start.month:02d}.{start.year % 100:02d}", 8)
    out += _field(f"{start.hour:02d}.{start.minute:02d}.{start.second:02d}", 8)
    out += _field(header.header_bytes, 8)
    out += _field(header.reserved, 44)
    out += _field(header.n_records, 8)
    out += _field(_format_number(header.record_duration_s, 8), 8)
    out += _field(len(header.signals), 4)

    for name, width in _SIGNAL_FIELDS:
        for sh in header.signals:
            value = getattr(sh, name)
            if name in ("physical_min", "physical_max"):
                value = _format_number(value, width)
            out += _field(value, width)

    blocks = []
    for sh, signal in zip(header.signals, signals):
        spr = sh.samples_per_record
        if sh.is_annotation:
            records = signal.tal_records or []
            if len(records) != header.n_records or any(len(r) > 2 * spr for r in records):
                raise ShapeError(
                    f"Annotation signal '{sh.label}' does not fit {header.n_records} records of {2 * spr} bytes"
                )
            raw = b"".join(r.ljust(2 * spr, b"\x00") for r in records)
            digital = np.frombuffer(raw, dtype="<i2") if raw else np.zeros(0, dtype="<i2")
        elif signal.digital is not None:
            digital = np.asarray(signal.digital, dtype=np.int16)
        else:
            digital = physical_to_digital(signal.samples, sh)
        if len(digital) != header.n_records * spr:
            raise ShapeError(
                f"Signal '{sh.label}' holds {len(digital)} samples, header expects "
                f"{header.n_records} records x {spr}"
            )
        blocks.append(digital.reshape(header.n_records, spr))

    if blocks:
        out += np.concatenate(blocks, axis=1).astype("<i2").tobytes()
    return bytes(out)


def read_edf(path):
    """Read and parse an EDF file from disk."""
    path = Path(path)
    logger.info(f"event=edf_read path={path}")
    return parse_edf(path.read_bytes())


def write_edf_file(path, header, signals):
    """Write an EDF file to disk."""
    path = Path(path)
    path.write_bytes(write_edf(header, signals))
    return path


def make_header(signals, record_duration_s=1.0, **fields):
    """
    Build a consistent EdfHeader for plain sampled signals.

    Each signal is split into records of ``record_duration_s`` seconds; its
    length must be a whole number of records.
    """
    signal_headers = []
    n_records = None
    for signal in signals:
        spr = signal.rate_hz * record_duration_s
        if not float(spr).is_integer():
            raise ShapeError(f"Signal '{signal.channel}' rate does not give whole samples per record")
        spr = int(spr)
        count = len(signal.samples) // spr if spr else 0
        if spr and count * spr != len(signal.samples):
            raise ShapeError(f"Signal '{signal.channel}' length is not a whole number of records")
        if n_records is not None and count != n_records:
            raise ShapeError("Signals span different record counts", (n_records,), (count,))
        n_records = count
        samples = np.asarray(signal.samples, dtype=np.float64)
        # whole-unit bounds always fit the 8-character header fields
        lo, hi = (float(np.floor(samples.min())), float(np.ceil(samples.max()))) if samples.size else (-1.0, 1.0)
        if lo == hi:
            lo, hi = lo - 1.0, hi + 1.0
        signal_headers.append(SignalHeader(label=signal.channel, physical_min=lo, physical_max=hi,
                                           samples_per_record=spr))
    return EdfHeader(n_records=n_records or 0, record_duration_s=record_duration_s,
                     signals=signal_headers, **fields)
