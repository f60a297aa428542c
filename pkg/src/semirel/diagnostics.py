"""CSV stream of per-output-step diagnostics."""

from __future__ import annotations

import csv
import io

from .dynamics import DIAGNOSTIC_COLUMNS

SCHEMA_VERSION = "# semirel-diagnostics v1"


def _cell(value):
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    return repr(float(value))


class DiagnosticsWriter:
    """Writes the versioned header once, then one row per call to :meth:`write`."""

    def __init__(self, stream):
        self.stream = stream
        self.stream.write(SCHEMA_VERSION + "\n")
        self._csv = csv.writer(stream, lineterminator="\n")
        self._csv.writerow(DIAGNOSTIC_COLUMNS)

    def write(self, row: dict):
        missing = [c for c in DIAGNOSTIC_COLUMNS if c not in row]
        if missing:
            raise KeyError(f"diagnostics row lacks columns {missing}")
        self._csv.writerow([_cell(row[c]) for c in DIAGNOSTIC_COLUMNS])


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = DiagnosticsWriter(buf)
    for row in rows:
        writer.write(row)
    return buf.getvalue()


def read_csv(text: str):
    """Parse a diagnostics CSV back into a list of dicts (floats, ints for step)."""
    lines = text.splitlines()
    if not lines or lines[0] != SCHEMA_VERSION:
        raise ValueError("missing or unsupported diagnostics header")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != DIAGNOSTIC_COLUMNS:
        raise ValueError(f"unexpected columns {reader.fieldnames}")
    out = []
    for rec in reader:
        out.append({k: (int(v) if k == "step" else float(v)) for k, v in rec.items()})
    return out
