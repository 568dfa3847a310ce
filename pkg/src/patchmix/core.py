"""Core domain types and the cloud file formats.

Coordinates are stored as 32-bit floats (the usual point-cloud pipeline
width); every derived quantity (costs, scores, targets) is accumulated in
64-bit floats. Two on-disk cloud formats exist:

* ``xyz`` text: one point per line, three whitespace-separated decimals,
  comment lines start with ``#``. Round-trips coordinates to 6 significant
  digits.
* ``ppmx`` binary, little-endian: magic ``PPMX``, version u16 = 1, flags u16
  (bit 0 = label present), N u32, C u32 (0 when no label space), label u32
  (present iff bit 0 is set), then N*3 IEEE-754 float32 in x,y,z point-major
  order. Round-trips bit-exactly.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ValidationError

COORD_DTYPE = np.float32

PPMX_MAGIC = b"PPMX"
PPMX_VERSION = 1
_PPMX_FIXED = struct.Struct("<4sHHII")  # magic, version, flags, N, C
_PPMX_LABEL = struct.Struct("<I")
_FLAG_LABEL = 0x0001

TARGET_SUM_TOL = 1e-9


def readonly_view(arr: np.ndarray) -> np.ndarray:
    """Read-only view of ``arr``; never touches the caller's write flag."""
    view = arr.view()
    view.setflags(write=False)
    return view


def _as_coords(points) -> np.ndarray:
    pts = np.asarray(points, dtype=COORD_DTYPE)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"points must be an (N, 3) array, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValidationError("a point cloud needs at least one point")
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValidationError(f"non-finite coordinate in point {bad}")
    return pts


@dataclass(frozen=True)
class LabelSpace:
    """The C classes a classification target ranges over."""

    num_classes: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.num_classes) < 2:
            raise ValidationError(f"a label space needs at least 2 classes, got {self.num_classes}")
        object.__setattr__(self, "num_classes", int(self.num_classes))
        if self.class_names is not None:
            names = tuple(self.class_names)
            if len(names) != self.num_classes:
                raise ValidationError(
                    f"{len(names)} class names for {self.num_classes} classes"
                )
            if len(set(names)) != len(names):
                raise ValidationError("class names must be unique")
            object.__setattr__(self, "class_names", names)

    def one_hot(self, label: int) -> "TargetDist":
        return TargetDist.one_hot(label, self.num_classes)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable cloud of N xyz points with an optional class label.

    ``points`` is stored float32 and marked read-only. When the input array
    is already float32 it is aliased, not copied; callers handing over a
    buffer must not mutate it afterwards.
    """

    points: np.ndarray
    label: int | None = None
    id: str | None = None
    label_space: LabelSpace | None = None

    def __post_init__(self):
        pts = _as_coords(self.points)
        if self.label is not None:
            label = int(self.label)
            if label < 0:
                raise ValidationError(f"label must be non-negative, got {label}")
            if self.label_space is not None and label >= self.label_space.num_classes:
                raise ValidationError(
                    f"label {label} outside label space of {self.label_space.num_classes} classes"
                )
            object.__setattr__(self, "label", label)
        object.__setattr__(self, "points", readonly_view(pts))

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    def with_points(self, points, id: str | None = None) -> "PointCloud":
        """Same label/space, new coordinates (used by geometric transforms)."""
        return PointCloud(points, label=self.label, id=id if id is not None else self.id,
                          label_space=self.label_space)

    def one_hot_target(self) -> "TargetDist":
        if self.label is None or self.label_space is None:
            raise ParameterError("cloud has no label or no label space; cannot build a target")
        return self.label_space.one_hot(self.label)


@dataclass(frozen=True, eq=False)
class TargetDist:
    """A C-class probability vector used as a (soft) classification target."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 2:
            raise ValidationError(f"target weights must be a (C>=2,) vector, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValidationError("target weights contain non-finite values")
        if (w < 0).any():
            raise ValidationError("target weights must be non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > TARGET_SUM_TOL:
            raise ValidationError(f"target weights sum to {total!r}, expected 1")
        object.__setattr__(self, "weights", readonly_view(w))

    @classmethod
    def one_hot(cls, label: int, num_classes: int) -> "TargetDist":
        if not 0 <= label < num_classes:
            raise ParameterError(f"label {label} outside [0, {num_classes})")
        w = np.zeros(num_classes, dtype=np.float64)
        w[label] = 1.0
        return cls(w)

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary selection vector over patch slots (or points for the baselines)."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or b.shape[0] < 1:
            raise ValidationError(f"mask must be a non-empty vector, got shape {b.shape}")
        if not np.isin(b, (0, 1)).all():
            raise ValidationError("mask entries must be 0 or 1")
        object.__setattr__(self, "bits", readonly_view(b))

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def selected(self) -> np.ndarray:
        """Boolean view of the mask."""
        return self.bits.astype(bool)


# ---------------------------------------------------------------------------
# file formats

_FORMATS = ("xyz", "ppmx")


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in _FORMATS:
            raise ParameterError(f"unknown cloud format {fmt!r}, expected one of {_FORMATS}")
        return fmt
    suffix = path.suffix.lower().lstrip(".")
    if suffix in _FORMATS:
        return suffix
    raise ParameterError(f"cannot infer cloud format from {path.name!r}; pass fmt=")


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Load a cloud from ``xyz`` text or ``ppmx`` binary.

    Point order is preserved exactly as stored; the cloud id is the file stem.
    Raises FormatError naming the offending line (text) or byte offset
    (binary) on malformed input.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if fmt == "xyz":
        return _load_xyz(path)
    return _load_ppmx(path)


def _load_xyz(path: Path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                xyz = [float(p) for p in parts]
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: unparsable coordinate") from None
            if not all(math.isfinite(v) for v in xyz):
                raise FormatError(f"{path}: line {lineno}: non-finite coordinate")
            rows.append(xyz)
    if not rows:
        raise FormatError(f"{path}: no points in file")
    return PointCloud(np.array(rows, dtype=COORD_DTYPE), id=path.stem)


def _load_ppmx(path: Path) -> PointCloud:
    data = path.read_bytes()
    if len(data) < _PPMX_FIXED.size:
        raise FormatError(f"{path}: truncated header, {len(data)} bytes")
    magic, version, flags, n, c = _PPMX_FIXED.unpack_from(data, 0)
    if magic != PPMX_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if version != PPMX_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if flags & ~_FLAG_LABEL:
        raise FormatError(f"{path}: unknown flag bits 0x{flags:04x} at byte 6")
    if n < 1:
        raise FormatError(f"{path}: zero point count at byte 8")
    offset = _PPMX_FIXED.size
    label = None
    if flags & _FLAG_LABEL:
        if len(data) < offset + _PPMX_LABEL.size:
            raise FormatError(f"{path}: truncated label field at byte {offset}")
        (label,) = _PPMX_LABEL.unpack_from(data, offset)
        offset += _PPMX_LABEL.size
        if c < 2:
            raise FormatError(f"{path}: label present but class count is {c} (byte 12)")
        if label >= c:
            raise FormatError(f"{path}: label {label} outside {c} classes (byte {offset - 4})")
    expected = offset + n * 12
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    pts = np.frombuffer(data, dtype="<f4", count=n * 3, offset=offset).reshape(n, 3)
    finite = np.isfinite(pts)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError(f"{path}: non-finite coordinate at byte {offset + bad * 4}")
    space = LabelSpace(c) if c >= 2 else None
    return PointCloud(pts, label=label, id=path.stem, label_space=space)


def save_cloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    """Write a cloud; ppmx round-trips bit-exactly, xyz to 6 significant digits.

    Writes are atomic (temp file + rename). A labelled cloud needs a label
    space before it can be written as ppmx (the header stores C).
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "xyz":
        payload = _dump_xyz(cloud)
    else:
        payload = _dump_ppmx(cloud)
    _atomic_write(path, payload)


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def _dump_xyz(cloud: PointCloud) -> bytes:
    lines = [" ".join(f"{float(v):.6g}" for v in row) for row in cloud.points]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _dump_ppmx(cloud: PointCloud) -> bytes:
    flags = 0
    c = cloud.label_space.num_classes if cloud.label_space is not None else 0
    parts = []
    if cloud.label is not None:
        if cloud.label_space is None:
            raise ParameterError("labelled cloud needs a label space to be saved as ppmx")
        flags |= _FLAG_LABEL
    parts.append(_PPMX_FIXED.pack(PPMX_MAGIC, PPMX_VERSION, flags, cloud.n_points, c))
    if flags & _FLAG_LABEL:
        parts.append(_PPMX_LABEL.pack(cloud.label))
    parts.append(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
    return b"".join(parts)


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center the cloud on the origin and scale the farthest point to norm 1.

    Idempotent within 1e-6. A fully degenerate cloud (all points coincide)
    collapses to the origin.
    """
    pts = cloud.points.astype(np.float64)
    centered = pts - pts.mean(axis=0)
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius > 0.0:
        centered /= radius
    return cloud.with_points(centered.astype(COORD_DTYPE))
