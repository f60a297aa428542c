"""Binary field snapshots with a short text header.

Layout::

    PMX1
    field <name>
    kind <scalar|vector|spinor>
    count <n>                  (optional, number of stacked fields, default 1)
    grid <nx> <ny> <nz>
    box <Lx> <Ly> <Lz>
    time <t>
    constants <hbar> <m> <q> <c> <eps0>
    <empty line>
    <float64 1.0, little endian>
    <payload>

The payload is little-endian float64 with x varying fastest. Components
(and stacked fields) follow each other as full-grid blocks; complex values
are stored as (re, im) pairs. Scalars and vectors are real, spinors complex.
The 8-byte sentinel lets a reader tell a byte-swapped file from a corrupt one.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import SnapshotError

MAGIC = "PMX1"
KINDS = {"scalar": (1, False), "vector": (3, False), "spinor": (2, True)}
SENTINEL = struct.pack("<d", 1.0)
MAX_PAYLOAD = 1 << 40
HEADER_LIMIT = 4096


@dataclass(frozen=True)
class SnapshotMeta:
    name: str
    kind: str
    grid: tuple
    box: tuple
    time: float
    constants: tuple
    count: int = 1

    @property
    def components(self):
        return KINDS[self.kind][0]

    @property
    def is_complex(self):
        return KINDS[self.kind][1]

    @property
    def shape(self):
        lead = (self.components,) if self.kind != "scalar" else ()
        if self.count != 1:
            lead = (self.count,) + lead
        return lead + tuple(self.grid)

    @property
    def payload_bytes(self):
        n = math.prod(self.grid) * self.components * self.count * 8
        return n * 2 if self.is_complex else n


def _validate_meta(meta: SnapshotMeta, offset=None):
    if meta.kind not in KINDS:
        raise SnapshotError(f"unknown kind {meta.kind!r}", offset)
    if len(meta.grid) != 3 or any(int(n) < 1 for n in meta.grid):
        raise SnapshotError(f"invalid grid {meta.grid}", offset)
    if len(meta.box) != 3 or not all(math.isfinite(L) and L > 0 for L in meta.box):
        raise SnapshotError(f"invalid box {meta.box}", offset)
    if meta.count < 1:
        raise SnapshotError(f"invalid count {meta.count}", offset)
    if len(meta.constants) != 5:
        raise SnapshotError("constants line needs hbar m q c eps0", offset)
    if meta.payload_bytes > MAX_PAYLOAD:
        raise SnapshotError(f"grid {meta.grid} overflows the payload limit", offset)
    if not meta.name or any(ch.isspace() for ch in meta.name):
        raise SnapshotError(f"field name {meta.name!r} must be a single word", offset)


def write_snapshot(field, meta: SnapshotMeta) -> bytes:
    _validate_meta(meta)
    arr = np.asarray(field)
    if arr.shape != meta.shape:
        raise SnapshotError(f"field shape {arr.shape} does not match header shape {meta.shape}")
    if meta.is_complex:
        arr = arr.astype("<c16", copy=False)
    else:
        if np.iscomplexobj(arr):
            raise SnapshotError(f"{meta.kind} snapshots are real; got complex data")
        arr = arr.astype("<f8", copy=False)
    lines = [
        MAGIC,
        f"field {meta.name}",
        f"kind {meta.kind}",
    ]
    if meta.count != 1:
        lines.append(f"count {meta.count}")
    lines += [
        "grid " + " ".join(str(int(n)) for n in meta.grid),
        "box " + " ".join(repr(float(L)) for L in meta.box),
        f"time {float(meta.time)!r}",
        "constants " + " ".join(repr(float(v)) for v in meta.constants),
        "",
        "",
    ]
    header = "\n".join(lines).encode("ascii")
    blocks = arr.reshape((-1,) + tuple(meta.grid))
    payload = b"".join(block.ravel(order="F").tobytes() for block in blocks)
    return header + SENTINEL + payload


def _parse_header(data: bytes):
    end = data.find(b"\n\n")
    if end < 0 or end > HEADER_LIMIT:
        raise SnapshotError("header is not terminated by an empty line", min(len(data), HEADER_LIMIT))
    try:
        text = data[:end].decode("ascii")
    except UnicodeDecodeError:
        raise SnapshotError("header is not ASCII text", 0) from None
    lines = text.split("\n")
    if lines[0] != MAGIC:
        raise SnapshotError(f"bad magic {lines[0][:16]!r}, expected {MAGIC!r}", 0)
    fields, offset = {}, len(lines[0]) + 1
    for line in lines[1:]:
        key, _, value = line.partition(" ")
        if key in fields:
            raise SnapshotError(f"duplicate header entry {key!r}", offset)
        fields[key] = (value, offset)
        offset += len(line) + 1
    return fields, end + 2


def read_snapshot(data: bytes):
    """Return ``(array, SnapshotMeta)`` from snapshot bytes."""
    data = bytes(data)
    fields, body = _parse_header(data)

    def get(key, conv, required=True, default=None):
        if key not in fields:
            if required:
                raise SnapshotError(f"missing header entry {key!r}", body)
            return default
        value, off = fields[key]
        try:
            return conv(value)
        except (ValueError, TypeError):
            raise SnapshotError(f"malformed header entry {key!r}: {value!r}", off) from None

    def floats(n):
        def conv(text):
            parts = text.split()
            if len(parts) != n:
                raise ValueError
            return tuple(float(p) for p in parts)
        return conv

    def ints(text):
        parts = text.split()
        if len(parts) != 3:
            raise ValueError
        return tuple(int(p) for p in parts)

    unknown = set(fields) - {"field", "kind", "count", "grid", "box", "time", "constants"}
    if unknown:
        key = sorted(unknown)[0]
        raise SnapshotError(f"unknown header entry {key!r}", fields[key][1])
    meta = SnapshotMeta(
        name=get("field", str),
        kind=get("kind", str),
        grid=get("grid", ints),
        box=get("box", floats(3)),
        time=get("time", float),
        constants=get("constants", floats(5)),
        count=get("count", int, required=False, default=1),
    )
    _validate_meta(meta, body)
    sentinel = data[body:body + 8]
    if len(sentinel) < 8:
        raise SnapshotError("file ends before the sentinel", len(data))
    if sentinel != SENTINEL:
        if sentinel == struct.pack(">d", 1.0):
            raise SnapshotError("payload is big-endian; expected little-endian", body)
        raise SnapshotError("sentinel is not 1.0; corrupt payload", body)
    start = body + 8
    have = len(data) - start
    if have != meta.payload_bytes:
        what = "truncated" if have < meta.payload_bytes else "oversized"
        raise SnapshotError(
            f"{what} payload: {have} bytes, expected {meta.payload_bytes}", start + min(have, meta.payload_bytes)
        )
    dtype = "<c16" if meta.is_complex else "<f8"
    flat = np.frombuffer(data, dtype=dtype, offset=start)
    nblocks = meta.count * (meta.components if meta.kind != "scalar" else 1)
    npts = math.prod(meta.grid)
    blocks = [flat[i * npts:(i + 1) * npts].reshape(meta.grid, order="F") for i in range(nblocks)]
    arr = np.stack(blocks).reshape(meta.shape).astype(complex if meta.is_complex else float)
    return arr, meta


def save_snapshot(path, field, meta: SnapshotMeta):
    with open(path, "wb") as fh:
        fh.write(write_snapshot(field, meta))


def load_snapshot(path):
    with open(path, "rb") as fh:
        return read_snapshot(fh.read())
