"""Speaker-labelled feature vectors: the dataset model, file formats, and
deterministic splitting / subsampling."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import rng
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    ValidationError,
)

MAGIC = b"BIOV"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpeakerDataset:
    """Feature vectors grouped by speaker.

    ``speakers`` maps speaker id to a read-only ``(k_i, dim)`` float64 array.
    Ids are kept in lexicographic order regardless of construction order.
    """

    dim: int
    speakers: Mapping[str, np.ndarray]
    manifest: Mapping | None = None

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValidationError(f"dimension must be a positive integer, got {self.dim!r}")
        clean = {}
        for sid in sorted(self.speakers):
            if not isinstance(sid, str) or not sid:
                raise ValidationError(f"speaker id must be non-empty text, got {sid!r}")
            arr = np.asarray(self.speakers[sid], dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise ValidationError(f"speaker {sid!r} has no vectors")
            if arr.shape[1] != self.dim:
                raise DimensionMismatchError(
                    f"speaker {sid!r} vectors have length {arr.shape[1]}, expected {self.dim}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"speaker {sid!r} has non-finite values")
            clean[sid] = _frozen(arr, np.float64)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "speakers", MappingProxyType(clean))
        if self.manifest is not None:
            object.__setattr__(self, "manifest", MappingProxyType(dict(self.manifest)))

    @classmethod
    def from_arrays(cls, labels, X, manifest=None):
        """Build from a flat ``(N, dim)`` matrix and per-row speaker labels."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError("feature matrix must be 2-D")
        groups: dict[str, list[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(str(lab), []).append(i)
        return cls(X.shape[1], {s: X[idx] for s, idx in groups.items()}, manifest)

    @property
    def speaker_ids(self):
        return list(self.speakers)

    @property
    def n_speakers(self):
        return len(self.speakers)

    @property
    def n_vectors(self):
        return sum(a.shape[0] for a in self.speakers.values())

    def stacked(self):
        """Return ``(labels, X)`` with rows in speaker order."""
        labels = []
        for sid, a in self.speakers.items():
            labels.extend([sid] * a.shape[0])
        X = np.concatenate(list(self.speakers.values()), axis=0)
        return labels, X

    def map(self, fn):
        """Apply ``fn`` to every speaker's matrix; ``fn`` may change the dimension."""
        out = {sid: fn(a) for sid, a in self.speakers.items()}
        dim = next(iter(out.values())).shape[1]
        return SpeakerDataset(dim, out, self.manifest)

    def select(self, ids):
        return SpeakerDataset(self.dim, {s: self.speakers[s] for s in ids}, self.manifest)


@dataclass(frozen=True)
class QuantizedDataset:
    """Integer codes grouped by speaker; every code lies in ``[0, 2**bits)``."""

    bits: int
    speakers: Mapping[str, np.ndarray]
    dim: int = field(init=False)

    def __post_init__(self):
        if not self.speakers:
            raise EmptyInputError("quantized dataset has no speakers")
        clean = {}
        dim = None
        for sid in sorted(self.speakers):
            arr = np.asarray(self.speakers[sid])
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.shape[0] == 0:
                raise EmptyInputError(f"speaker {sid!r} has no vectors")
            if dim is None:
                dim = arr.shape[1]
            elif arr.shape[1] != dim:
                raise DimensionMismatchError(f"speaker {sid!r} has dimension {arr.shape[1]}, expected {dim}")
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValidationError(f"speaker {sid!r} codes are not integers")
            if arr.size and (arr.min() < 0 or arr.max() >= 2**self.bits):
                raise ValidationError(f"speaker {sid!r} has codes outside [0, {2**self.bits})")
            clean[sid] = _frozen(arr, np.int64)
        object.__setattr__(self, "speakers", MappingProxyType(clean))
        object.__setattr__(self, "dim", dim)

    @property
    def n_speakers(self):
        return len(self.speakers)

    def pooled(self):
        return np.concatenate(list(self.speakers.values()), axis=0)


# --------------------------------------------------------------------- I/O


def manifest_path(path):
    return Path(str(path) + ".manifest.json")


def _read_manifest(path):
    mp = manifest_path(path)
    if not mp.exists():
        return None
    try:
        doc = json.loads(mp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad manifest {mp}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError(f"manifest {mp} must be a JSON object")
    return doc


def _parse_float(text, line):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=line) from None


def read_csv_text(text, manifest=None):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", line=1) from None
    if not header or header[0] != "speaker_id":
        raise ParseError("header must start with 'speaker_id'", line=1)
    cols = header[1:]
    if not cols or cols != [f"f{j}" for j in range(len(cols))]:
        raise ParseError("feature columns must be named f0..f{m-1}", line=1)
    dim = len(cols)
    groups: dict[str, list[list[float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != dim + 1:
            raise DimensionMismatchError(
                f"line {lineno}: expected {dim} values, found {len(row) - 1}"
            )
        sid = row[0]
        if not sid:
            raise ParseError("empty speaker id", line=lineno)
        vals = [_parse_float(v, lineno) for v in row[1:]]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"line {lineno}: non-finite value for speaker {sid!r}")
        groups.setdefault(sid, []).append(vals)
    if not groups:
        raise EmptyInputError("no records")
    return SpeakerDataset(dim, groups, manifest)


def write_csv_text(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speaker_id"] + [f"f{j}" for j in range(ds.dim)])
    for sid, arr in ds.speakers.items():
        for row in arr:
            w.writerow([sid] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_binary_bytes(blob, manifest=None):
    if len(blob) < _HEADER.size:
        raise ParseError("truncated header", offset=0)
    magic, version, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if dim == 0:
        raise ParseError("dimension is zero", offset=8)
    pos = _HEADER.size
    groups: dict[str, list[np.ndarray]] = {}
    vec_bytes = 8 * dim
    for rec in range(count):
        if pos + 2 > len(blob):
            raise ParseError(f"truncated record {rec}", offset=pos)
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + n + vec_bytes > len(blob):
            raise ParseError(f"truncated record {rec}", offset=pos)
        try:
            sid = blob[pos : pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"record {rec}: speaker id is not UTF-8", offset=pos) from None
        pos += n
        vals = np.frombuffer(blob, dtype="<f8", count=dim, offset=pos)
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"record {rec}: non-finite value for speaker {sid!r}")
        pos += vec_bytes
        groups.setdefault(sid, []).append(vals)
    if pos != len(blob):
        raise ParseError("trailing bytes after last record", offset=pos)
    if not groups:
        raise EmptyInputError("no records")
    return SpeakerDataset(dim, {s: np.vstack(v) for s, v in groups.items()}, manifest)


def write_binary_bytes(ds):
    parts = [_HEADER.pack(MAGIC, VERSION, ds.dim, ds.n_vectors)]
    for sid, arr in ds.speakers.items():
        raw = sid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"speaker id too long: {sid[:32]!r}...")
        prefix = struct.pack("<H", len(raw)) + raw
        for row in arr:
            parts.append(prefix)
            parts.append(row.astype("<f8").tobytes())
    return b"".join(parts)


def _infer_format(path):
    return "binary" if str(path).endswith((".bin", ".biov")) else "csv"


def load(path, format=None):
    """Read a dataset (plus optional manifest sidecar) from ``path``."""
    fmt = format or _infer_format(path)
    manifest = _read_manifest(path)
    if fmt == "csv":
        return read_csv_text(Path(path).read_text(encoding="utf-8"), manifest)
    if fmt == "binary":
        return read_binary_bytes(Path(path).read_bytes(), manifest)
    raise ValueError(f"unknown format {fmt!r}")


def save(ds, path, format=None):
    fmt = format or _infer_format(path)
    if fmt == "csv":
        Path(path).write_text(write_csv_text(ds), encoding="utf-8")
    elif fmt == "binary":
        Path(path).write_bytes(write_binary_bytes(ds))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if ds.manifest is not None:
        manifest_path(path).write_text(json.dumps(dict(ds.manifest), sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------- partitioning


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_by_speaker(ds, dev_fraction, seed):
    """Partition speakers into (dev, measurement) sets by a seeded shuffle."""
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError("dev_fraction must lie in (0, 1)")
    n = ds.n_speakers
    if n < 2:
        raise InsufficientDataError(f"need at least 2 speakers to split, have {n}", attainable=n)
    n_dev = min(max(_round_half_up(dev_fraction * n), 1), n - 1)
    ids = ds.speaker_ids
    order = rng.permutation(rng.stream(seed, 0x5B17), n)
    dev_ids = sorted(ids[i] for i in order[:n_dev])
    meas_ids = sorted(ids[i] for i in order[n_dev:])
    return ds.select(dev_ids), ds.select(meas_ids)


def subsample(ds, n_speakers, k_samples, seed):
    """Pick ``n_speakers`` speakers with exactly ``k_samples`` vectors each."""
    if n_speakers < 1 or k_samples < 1:
        raise ValueError("n_speakers and k_samples must be positive")
    qualifying = [s for s, a in ds.speakers.items() if a.shape[0] >= k_samples]
    if len(qualifying) < n_speakers:
        raise InsufficientDataError(
            f"only {len(qualifying)} speakers have >= {k_samples} vectors; {n_speakers} requested",
            attainable=len(qualifying),
        )
    order = rng.permutation(rng.stream(seed, 0x5AB5), len(qualifying))
    chosen = sorted(qualifying[i] for i in order[:n_speakers])
    out = {}
    for sid in chosen:
        arr = ds.speakers[sid]
        idx = rng.permutation(rng.stream(seed, 0x5AB6, rng.label_of(sid)), arr.shape[0])[:k_samples]
        out[sid] = arr[idx]
    return SpeakerDataset(ds.dim, out, ds.manifest)
