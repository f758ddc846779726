"""
Hypnogram annotation decoding.

EDF+ stores annotations as Time-stamped Annotation Lists (TALs):
``+onset[\\x15duration]\\x14text\\x14[text\\x14...]\\x00``, several TALs per data
record, NUL padded. Plain onset/duration/label tables are accepted too.
"""
import csv
import io
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from app.errors import AnnotationParseError

logger = logging.getLogger(__name__)

_ONSET = re.compile(r"^\s*[+-]\d+(?:\.\d*)?\s*$")
_DURATION = re.compile(r"^\s*\d+(?:\.\d*)?\s*$")


@dataclass(frozen=True)
class SleepAnnotation:
    onset_s: float
    duration_s: float
    stage_label: str

    @property
    def end_s(self):
        return self.onset_s + self.duration_s


def _parse_tal(chunk, record_index):
    """Decode one TAL (without its trailing NUL) into annotations."""
    if not chunk.endswith(b"\x14"):
        raise AnnotationParseError("TAL does not end with 0x14", record_index)
    try:
        text = chunk.decode("utf-8")
    except UnicodeDecodeError:
        raise AnnotationParseError("TAL is not valid UTF-8", record_index)

    timing, *texts = text[:-1].split("\x14")
    onset_text, sep, duration_text = timing.partition("\x15")
    if not _ONSET.match(onset_text):
        raise AnnotationParseError(f"Invalid TAL onset {onset_text!r}", record_index)
    if sep and not _DURATION.match(duration_text):
        raise AnnotationParseError(f"Invalid TAL duration {duration_text!r}", record_index)

    onset = float(onset_text)
    duration = float(duration_text) if sep else 0.0
    if onset < 0:
        raise AnnotationParseError(f"Negative onset {onset}", record_index)
    return [SleepAnnotation(onset, duration, label) for label in texts if label]


def parse_tal_records(records):
    """
    Decode a sequence of EDF+ annotation records.

    Args:
        records (list): Raw bytes of each annotation data record.

    Returns:
        list: SleepAnnotation sorted by onset.
    """
    annotations = []
    for index, record in enumerate(records):
        for chunk in record.split(b"\x00"):
            if chunk:
                annotations.extend(_parse_tal(chunk, index))
    return sorted(annotations, key=lambda a: a.onset_s)


def parse_annotation_table(text):
    """
    Parse an onset/duration/label table.

    Rows may be comma, tab or whitespace separated; a non-numeric first row
    is treated as a header and ``#`` lines as comments.
    """
    annotations = []
    for line_no, line in enumerate(io.StringIO(text)):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "," in line:
            fields = next(csv.reader([line]))
        elif "\t" in line:
            fields = line.split("\t")
        else:
            fields = line.split(None, 2)
        fields = [f.strip() for f in fields]
        if len(fields) < 3:
            raise AnnotationParseError(f"Expected onset, duration and label, got {line!r}", line_no)
        try:
            onset, duration = float(fields[0]), float(fields[1])
        except ValueError:
            if not annotations:
                continue
            raise AnnotationParseError(f"Non-numeric onset/duration in {line!r}", line_no)
        if onset < 0 or duration < 0:
            raise AnnotationParseError(f"Negative onset or duration in {line!r}", line_no)
        annotations.append(SleepAnnotation(onset, duration, ",".join(fields[2:])))
    return sorted(annotations, key=lambda a: a.onset_s)


def parse_annotations(source):
    """
    Decode annotations from TAL bytes, a list of TAL records, or a text table.

    Args:
        source (bytes | list | str): Annotation payload.

    Returns:
        list: SleepAnnotation sorted by onset; labels preserved verbatim.
    """
    if isinstance(source, (bytes, bytearray)):
        return parse_tal_records([bytes(source)])
    if isinstance(source, str):
        return parse_annotation_table(source)
    return parse_tal_records(list(source))


def _format_seconds(value):
    # TAL numbers never use exponent notation
    return f"{value:.6f}".rstrip("0").rstrip(".")


def encode_tal_records(annotations, record_bytes=None):
    """
    Encode annotations as a single EDF+ annotation record.

    The record starts with the time-keeping TAL required by EDF+. When
    ``record_bytes`` is given the record is NUL padded to that size.
    """
    out = bytearray(b"+0\x14\x14\x00")
    for a in annotations:
        onset, duration = _format_seconds(a.onset_s), _format_seconds(a.duration_s)
        out += f"+{onset}\x15{duration}\x14{a.stage_label}\x14\x00".encode("utf-8")
    if record_bytes is not None:
        if len(out) > record_bytes:
            raise AnnotationParseError(f"Annotations need {len(out)} bytes, record holds {record_bytes}")
        out = out.ljust(record_bytes, b"\x00")
    return bytes(out)


def read_annotations(path):
    """
    Read annotations from an EDF+ hypnogram or a text table on disk.
    """
    from app.signals.edf import read_edf

    path = Path(path)
    if path.suffix.lower() in (".edf", ".bdf", ".rec"):
        _, signals = read_edf(path)
        records = [r for s in signals if s.is_annotation for r in s.tal_records]
        return parse_tal_records(records)
    return parse_annotation_table(path.read_text(encoding="utf-8"))
