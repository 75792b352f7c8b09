"""Drawing-sequence data model, CSV/JSONL ingestion and validation.

A sequence stores its pen samples as an ``(L, 6)`` float array with the
channel order ``a, l, p, t, x, y`` (azimuth, altitude, pressure, timestamp,
x, y).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, LabelError, ParseError, SchemaError

CHANNELS = ("a", "l", "p", "t", "x", "y")
CSV_COLUMNS = ("subject_id", "label") + CHANNELS
LABELS = ("HC", "PD")
HC, PD = 0, 1

FATAL_ISSUES = frozenset(
    {"nonfinite_value", "nonincreasing_timestamp", "too_short", "negative_pressure"}
)


class PenSample(NamedTuple):
    azimuth: float
    altitude: float
    pressure: float
    timestamp: float
    x: float
    y: float


def parse_label(text):
    label = str(text).strip().upper()
    if label not in LABELS:
        raise LabelError(f"unknown label {text!r}, expected one of {LABELS}")
    return label


@dataclass(frozen=True)
class DrawSequence:
    subject_id: str
    label: str
    samples: np.ndarray
    sequence_id: str = ""

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != len(CHANNELS):
            raise SchemaError(f"samples must have shape (L, 6), got {samples.shape}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "label", parse_label(self.label))
        if not self.sequence_id:
            object.__setattr__(self, "sequence_id", str(self.subject_id))

    def __len__(self):
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DrawSequence):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.label == other.label
            and self.sequence_id == other.sequence_id
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    @property
    def target(self):
        """Integer class index (HC=0, PD=1)."""
        return LABELS.index(self.label)

    def channel(self, name):
        return self.samples[:, CHANNELS.index(name)]

    def sample(self, i):
        return PenSample(*map(float, self.samples[i]))


@dataclass
class ValidationReport:
    sequence_id: str
    issues: list = field(default_factory=list)

    @property
    def usable(self):
        return not any(kind in FATAL_ISSUES for kind, _ in self.issues)


def _to_float(value, line):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"not a number: {value!r}", line) from None
    if not math.isfinite(out):
        raise ParseError(f"non-finite value {value!r}", line)
    return out


def _parse_csv(text, sequence_id=""):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty CSV, header row required", 1) from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing columns {missing}", 1)
    index = {name: header.index(name) for name in CSV_COLUMNS}
    subject_id = label = None
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        sid = row[index["subject_id"]].strip()
        try:
            lab = parse_label(row[index["label"]])
        except LabelError as exc:
            raise LabelError(str(exc), lineno) from None
        if subject_id is None:
            subject_id, label = sid, lab
        elif (sid, lab) != (subject_id, label):
            raise ParseError("subject_id/label must be constant within a file", lineno)
        rows.append([_to_float(row[index[c]], lineno) for c in CHANNELS])
    if not rows:
        raise ParseError("no sample rows", 1)
    return DrawSequence(subject_id, label, np.array(rows), sequence_id)


def _parse_jsonl_record(line, lineno):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno)
    for key in ("subject_id", "label", "samples"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", lineno)
    try:
        label = parse_label(obj["label"])
    except LabelError as exc:
        raise LabelError(str(exc), lineno) from None
    samples = obj["samples"]
    if not isinstance(samples, list) or not samples:
        raise ParseError("samples must be a non-empty list", lineno)
    rows = []
    for row in samples:
        if not isinstance(row, list) or len(row) != len(CHANNELS):
            raise SchemaError("each sample must list the six channels a,l,p,t,x,y", lineno)
        rows.append([_to_float(v, lineno) for v in row])
    return DrawSequence(
        str(obj["subject_id"]), label, np.array(rows), str(obj.get("sequence_id", ""))
    )


def parse_sequences(text, format):
    """Parse every sequence in ``text``; CSV holds one sequence, JSONL one per line."""
    if format == "csv":
        return [_parse_csv(text)]
    if format == "jsonl":
        out = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if line.strip():
                out.append(_parse_jsonl_record(line, lineno))
        if not out:
            raise ParseError("no records in JSONL stream")
        return out
    raise ValueError(f"unsupported format {format!r}")


def parse_sequence(text, format):
    """Parse a single drawing sequence from CSV or JSONL text.

    Raises :class:`ParseError` (with a line number) on malformed rows,
    :class:`LabelError` for labels outside HC/PD and :class:`SchemaError`
    when a channel column is missing.
    """
    seqs = parse_sequences(text, format)
    if len(seqs) != 1:
        raise ParseError(f"expected one sequence, found {len(seqs)}")
    return seqs[0]


def _fmt(v):
    return repr(float(v))


def serialize_sequence(seq, format):
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in seq.samples:
            writer.writerow([seq.subject_id, seq.label] + [_fmt(v) for v in row])
        return buf.getvalue()
    if format == "jsonl":
        record = {
            "subject_id": seq.subject_id,
            "sequence_id": seq.sequence_id,
            "label": seq.label,
            "samples": [[float(v) for v in row] for row in seq.samples],
        }
        return json.dumps(record) + "\n"
    raise ValueError(f"unsupported format {format!r}")


def validate_sequence(seq, min_len):
    """Report every problem that would make ``seq`` unsafe for feature extraction."""
    report = ValidationReport(seq.sequence_id)
    samples = seq.samples
    for i, j in zip(*np.nonzero(~np.isfinite(samples))):
        report.issues.append(("nonfinite_value", int(i)))
    t = samples[:, CHANNELS.index("t")]
    with np.errstate(invalid="ignore"):
        bad = np.nonzero(~(np.diff(t) > 0))[0] + 1
    report.issues.extend(("nonincreasing_timestamp", int(i)) for i in bad)
    with np.errstate(invalid="ignore"):
        neg = np.nonzero(samples[:, CHANNELS.index("p")] < 0)[0]
    report.issues.extend(("negative_pressure", int(i)) for i in neg)
    if len(seq) < max(min_len, 2):
        report.issues.append(("too_short", len(seq)))
    return report


def _format_for(path):
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    raise DataError(f"cannot infer format of {path}")


def read_sequences(path):
    """Load sequences from a CSV/JSONL file or a directory of such files (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in (".csv", ".jsonl", ".ndjson")
        )
        out = []
        for p in files:
            out.extend(read_sequences(p))
        return out
    if not path.exists():
        raise DataError(f"no such file or directory: {path}")
    fmt = _format_for(path)
    seqs = parse_sequences(path.read_text(), fmt)
    if fmt == "csv":
        # CSV carries no sequence id column; the file name identifies the sequence.
        seqs = [DrawSequence(s.subject_id, s.label, s.samples, path.stem) for s in seqs]
    return seqs


def write_sequences(seqs, path, format="jsonl"):
    """Write sequences to one JSONL file, or one CSV per sequence into a directory."""
    path = Path(path)
    if format == "jsonl":
        path.write_text("".join(serialize_sequence(s, "jsonl") for s in seqs))
    elif format == "csv":
        path.mkdir(parents=True, exist_ok=True)
        for s in seqs:
            (path / f"{s.sequence_id}.csv").write_text(serialize_sequence(s, "csv"))
    else:
        raise ValueError(f"unsupported format {format!r}")
