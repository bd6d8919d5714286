"""Binary checkpoints, CSV series, JSON documents and run manifests.

Checkpoint layout (all little-endian)::

    b"CBLB"  u16 version  3 x u32 (nx, ny, nz)  3 x f64 (lx, ly, lz)  f64 t  f64 s
    six blocks (u1, u2, u3, theta, u10_hat, u10_tilde), each nx*ny*nz
    complex coefficients stored as interleaved f64 (re, im) in row-major order
    32-byte sha256 digest of everything before it
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .solver import FIELDS, State
from .spectral import Grid, ShearClock, SpectralField

MAGIC = b"CBLB"
CHECKPOINT_VERSION = 1
CSV_SCHEMA_VERSION = 1
JSON_SCHEMA_VERSION = 1
_HEADER = struct.Struct("<4sH3I3d2d")
_DIGEST = 32


def _payload(state: State) -> bytes:
    g = state.grid
    head = _HEADER.pack(MAGIC, CHECKPOINT_VERSION, g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, state.clock.t, state.clock.s)
    body = b"".join(np.ascontiguousarray(getattr(state, f).coeffs, dtype="<c16").tobytes() for f in FIELDS)
    return head + body


def checkpoint_bytes(state: State) -> bytes:
    data = _payload(state)
    return data + hashlib.sha256(data).digest()


def write_checkpoint(state: State, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(state))
    return path


def parse_checkpoint(data: bytes) -> State:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated checkpoint: expected at least {_HEADER.size} header bytes, got {len(data)}")
    magic, version, nx, ny, nz, lx, ly, lz, t, s = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (reader version {CHECKPOINT_VERSION})")
    block = nx * ny * nz * 16
    expected = _HEADER.size + len(FIELDS) * block + _DIGEST
    if len(data) != expected:
        raise FormatError(f"checkpoint length mismatch: expected {expected} bytes, got {len(data)}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("checkpoint hash mismatch: content corrupted")
    grid = Grid(nx, ny, nz, lx, ly, lz)
    fields = []
    off = _HEADER.size
    for _ in FIELDS:
        arr = np.frombuffer(data, dtype="<c16", count=nx * ny * nz, offset=off).reshape(grid.shape).astype(complex)
        fields.append(SpectralField(grid, arr))
        off += block
    return State(*fields, clock=ShearClock(t, s))


def read_checkpoint(path) -> State:
    return parse_checkpoint(Path(path).read_bytes())


# -- text formats ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def series_csv(rows, columns) -> str:
    """CSV text with a schema comment line; floats written with repr for exact round-trip."""
    buf = io.StringIO()
    buf.write(f"# couettelab series schema={CSV_SCHEMA_VERSION} columns={len(columns)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_series_csv(path) -> tuple[list[str], list[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# couettelab series"):
        raise FormatError("missing series schema line")
    schema = int(lines[0].split("schema=")[1].split()[0])
    if schema != CSV_SCHEMA_VERSION:
        raise FormatError(f"series schema {schema} is not supported (reader schema {CSV_SCHEMA_VERSION})")
    reader = csv.reader(lines[1:])
    cols = next(reader)
    rows = [{c: float(v) for c, v in zip(cols, r)} for r in reader]
    return cols, rows


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, repr floats, non-finite floats as strings."""
    return json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    config: dict
    code_version: str
    grid: list
    start_time: str = ""
    end_time: str = ""
    wall_seconds: float = 0.0
    files: dict = field(default_factory=dict)

    def add_file(self, path, root) -> None:
        rel = str(Path(path).relative_to(root))
        self.files[rel] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "schema": JSON_SCHEMA_VERSION,
            "config": self.config,
            "code_version": self.code_version,
            "grid": self.grid,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "wall_seconds": self.wall_seconds,
            "files": self.files,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        if d.get("schema") != JSON_SCHEMA_VERSION:
            raise FormatError(f"manifest schema {d.get('schema')} is not supported (reader schema {JSON_SCHEMA_VERSION})")
        return cls(d["config"], d["code_version"], d["grid"], d["start_time"], d["end_time"], d["wall_seconds"], d["files"])

    def verify(self, root) -> list[str]:
        """Names of listed files whose current hash differs (or that are missing)."""
        bad = []
        for name, digest in self.files.items():
            p = Path(root) / name
            if not p.exists() or sha256_file(p) != digest:
                bad.append(name)
        return bad


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.write_text(dumps_json(manifest.to_dict()))
    return path


def read_manifest(path) -> Manifest:
    return Manifest.from_dict(json.loads(Path(path).read_text()))
