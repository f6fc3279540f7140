"""Data model and on-disk formats shared by every stage of the pipeline.

Tensor files are a 16-byte header followed by a row-major float32 payload::

    magic   4 ASCII bytes (VCFT, VCML, VCCB, VCSE, VCAC, VCEM)
    version u32, little-endian (currently 1)
    rows    u32
    cols    u32
    payload rows * cols little-endian IEEE-754 float32

Unit files (``VCUN``) store a discrete unit sequence as u16 ids.  Checkpoints
are containers of named tensor files plus a JSON sidecar next to them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from softvc.errors import DataError, FormatError, ParseError

TENSOR_KINDS = ("VCFT", "VCML", "VCCB", "VCSE", "VCAC", "VCEM")
UNIT_MAGIC = "VCUN"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIII")
_UNIT_HEADER = struct.Struct("<4sII")
_LE_F32 = np.dtype("<f4")
_LE_U16 = np.dtype("<u2")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _as_finite_matrix(x, name: str, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return arr


@dataclass
class FeatureSequence:
    """Backbone features for one utterance, ``T x D`` float32 frames."""

    utterance_id: str
    speaker_id: str
    frames: np.ndarray
    frame_period_ms: float = 20.0

    def __post_init__(self):
        self.frames = _as_finite_matrix(self.frames, "frames", dtype=np.float32)
        if not self.frame_period_ms > 0:
            raise DataError("frame_period_ms must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class UnitSequence:
    """Discrete unit ids ``d_1..d_T`` drawn from a dictionary of size ``K``."""

    utterance_id: str
    units: np.ndarray
    K: int

    def __post_init__(self):
        units = np.asarray(self.units)
        if units.ndim != 1:
            raise DataError("units must be a 1-D sequence")
        if units.size and not np.issubdtype(units.dtype, np.integer):
            raise DataError("units must be integers")
        self.units = units.astype(np.int64)
        if self.K < 1:
            raise DataError("K must be positive")
        if self.units.size and (self.units.min() < 0 or self.units.max() >= self.K):
            raise DataError(f"unit ids must lie in [0, {self.K})")

    def __len__(self) -> int:
        return int(self.units.size)


@dataclass
class SoftUnitSequence:
    """Soft units ``s_1..s_T`` as a ``T x D_s`` matrix."""

    utterance_id: str
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = _as_finite_matrix(self.vectors, "vectors")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class ManifestRecord:
    id: str
    speaker: str
    feature_path: str | None = None
    wav_path: str | None = None
    transcript_words: str | None = None
    transcript_phonemes: str | None = None
    embedding_path: str | None = None
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def resolve(self, attr: str) -> Path:
        """Absolute path for one of the ``*_path`` fields."""
        value = getattr(self, attr)
        if value is None:
            raise DataError(f"record {self.id!r} has no {attr}")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


@dataclass
class Manifest:
    records: list[ManifestRecord]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.id: r for r in self.records}

    def by_speaker(self) -> dict[str, list[ManifestRecord]]:
        groups: dict[str, list[ManifestRecord]] = {}
        for r in self.records:
            groups.setdefault(r.speaker, []).append(r)
        return groups


# ---------------------------------------------------------------------------
# Tensor files
# ---------------------------------------------------------------------------


def _check_kind(kind: str) -> bytes:
    if kind not in TENSOR_KINDS:
        raise FormatError(f"unknown tensor kind {kind!r}; expected one of {TENSOR_KINDS}")
    return kind.encode("ascii")


def tensor_to_bytes(kind: str, matrix) -> bytes:
    magic = _check_kind(kind)
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = _as_finite_matrix(arr, "matrix")
    rows, cols = arr.shape
    single = np.ascontiguousarray(arr, dtype=_LE_F32)
    if not np.all(np.isfinite(single)):
        raise DataError("matrix overflows float32")
    payload = single.tobytes()
    return _HEADER.pack(magic, FORMAT_VERSION, rows, cols) + payload


def tensor_from_bytes(data: bytes, source: str = "<bytes>") -> tuple[str, np.ndarray]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    try:
        kind = magic.decode("ascii")
    except UnicodeDecodeError:
        kind = ""
    if kind not in TENSOR_KINDS:
        raise FormatError(f"{source}: unknown magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = rows * cols * 4
    payload = data[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{source}: payload is {len(payload)} bytes, header declares {rows}x{cols} ({expected} bytes)"
        )
    matrix = np.frombuffer(payload, dtype=_LE_F32).astype(np.float32).reshape(rows, cols)
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{source}: payload contains NaN or Inf")
    return kind, matrix


def write_tensor(kind: str, matrix, path) -> None:
    """Write ``matrix`` as a tensor file of the given kind."""
    data = tensor_to_bytes(kind, matrix)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write tensor file {path}: {exc}") from exc


def read_tensor(path) -> tuple[str, np.ndarray]:
    """Return ``(kind, float32 matrix)`` from a tensor file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor file {path}: {exc}") from exc
    return tensor_from_bytes(data, str(path))


def read_tensor_kind(path, kind: str) -> np.ndarray:
    found, matrix = read_tensor(path)
    if found != kind:
        raise FormatError(f"{path}: expected kind {kind}, found {found}")
    return matrix


# ---------------------------------------------------------------------------
# Unit files
# ---------------------------------------------------------------------------


def write_units(seq: UnitSequence, path) -> None:
    if seq.K > 65536:
        raise DataError("unit files store u16 ids; K must be <= 65536")
    header = _UNIT_HEADER.pack(UNIT_MAGIC.encode("ascii"), FORMAT_VERSION, len(seq))
    Path(path).write_bytes(header + seq.units.astype(_LE_U16).tobytes())


def read_units(path, K: int | None = None, utterance_id: str | None = None) -> UnitSequence:
    """Read a ``VCUN`` file; ``K`` defaults to ``max(id) + 1``."""
    data = Path(path).read_bytes()
    if len(data) < _UNIT_HEADER.size:
        raise FormatError(f"{path}: truncated unit header")
    magic, version, T = _UNIT_HEADER.unpack_from(data)
    if magic != UNIT_MAGIC.encode("ascii"):
        raise FormatError(f"{path}: unknown magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = data[_UNIT_HEADER.size:]
    if len(payload) != 2 * T:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {2 * T}")
    units = np.frombuffer(payload, dtype=_LE_U16).astype(np.int64)
    if K is None:
        K = int(units.max()) + 1 if units.size else 1
    uid = utterance_id if utterance_id is not None else Path(path).stem
    return UnitSequence(uid, units, K)


# ---------------------------------------------------------------------------
# Checkpoint containers
# ---------------------------------------------------------------------------

_CONTAINER_HEADER = struct.Struct("<4sII")
_ENTRY_NAME = struct.Struct("<H")
_ENTRY_SIZE = struct.Struct("<I")


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_json_sidecar(path, meta: Mapping) -> None:
    sidecar_path(path).write_text(json.dumps(dict(meta), sort_keys=True, indent=2) + "\n")


def read_json_sidecar(path) -> dict:
    sp = sidecar_path(path)
    try:
        return json.loads(sp.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"missing sidecar {sp}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sp}: invalid JSON ({exc})") from exc


def write_container(kind: str, tensors: Mapping[str, np.ndarray], meta: Mapping, path) -> None:
    """Write named tensors of one kind into a single file plus a JSON sidecar.

    Layout: ``magic | version u32 | count u32`` then per entry
    ``name_len u16 | name utf-8 | size u32 | tensor file bytes``.
    Entries are written in sorted name order so output is byte-stable.
    """
    magic = _check_kind(kind)
    parts = [_CONTAINER_HEADER.pack(magic, FORMAT_VERSION, len(tensors))]
    for name in sorted(tensors):
        encoded = name.encode("utf-8")
        blob = tensor_to_bytes(kind, tensors[name])
        parts += [_ENTRY_NAME.pack(len(encoded)), encoded, _ENTRY_SIZE.pack(len(blob)), blob]
    Path(path).write_bytes(b"".join(parts))
    write_json_sidecar(path, meta)


def read_container(path, kind: str | None = None) -> tuple[str, dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < _CONTAINER_HEADER.size:
        raise FormatError(f"{path}: truncated container header")
    magic, version, count = _CONTAINER_HEADER.unpack_from(data)
    found = magic.decode("ascii", errors="replace")
    if found not in TENSOR_KINDS:
        raise FormatError(f"{path}: unknown magic {magic!r}")
    if kind is not None and found != kind:
        raise FormatError(f"{path}: expected container kind {kind}, found {found}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _CONTAINER_HEADER.size
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = _ENTRY_NAME.unpack_from(data, offset)
            offset += _ENTRY_NAME.size
            name = data[offset:offset + n].decode("utf-8")
            offset += n
            (size,) = _ENTRY_SIZE.unpack_from(data, offset)
            offset += _ENTRY_SIZE.size
            blob = data[offset:offset + size]
            if len(blob) != size:
                raise FormatError(f"{path}: entry {name!r} truncated")
            offset += size
            sub_kind, matrix = tensor_from_bytes(blob, f"{path}[{name}]")
            if sub_kind != found:
                raise FormatError(f"{path}: entry {name!r} has kind {sub_kind}")
            tensors[name] = matrix
    except struct.error as exc:
        raise FormatError(f"{path}: truncated container ({exc})") from exc
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return found, tensors, read_json_sidecar(path)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

REQUIRED_FIELDS = ("id", "speaker", "feature_path")
_OPTIONAL_FIELDS = ("wav_path", "transcript_words", "transcript_phonemes", "embedding_path")


def parse_manifest_lines(
    lines: Iterable[str],
    base_dir=Path("."),
    required: tuple[str, ...] = REQUIRED_FIELDS,
) -> Manifest:
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        for name in required:
            if name not in obj:
                raise ParseError(f"line {lineno}: missing required field {name!r}")
        rid = str(obj["id"])
        if rid in seen:
            raise DataError(f"line {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        records.append(
            ManifestRecord(
                id=rid,
                speaker=str(obj.get("speaker", "")),
                feature_path=obj.get("feature_path"),
                base_dir=Path(base_dir),
                **{k: obj.get(k) for k in _OPTIONAL_FIELDS},
            )
        )
    return Manifest(records)


def parse_manifest(path, required: tuple[str, ...] = REQUIRED_FIELDS) -> Manifest:
    """Parse a JSON-Lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    with path.open() as fh:
        return parse_manifest_lines(fh, base_dir=path.parent, required=required)


def write_manifest(records: Iterable[Mapping], path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps({k: v for k, v in rec.items() if v is not None}) + "\n")


def load_features(record: ManifestRecord) -> FeatureSequence:
    frames = read_tensor_kind(record.resolve("feature_path"), "VCFT")
    return FeatureSequence(record.id, record.speaker, frames)
