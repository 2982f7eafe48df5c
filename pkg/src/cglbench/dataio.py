"""Dataset container files.

Binary layout (little endian)::

    b"CGLSKEL1"
    u32 num_sequences, u16 joints, u16 frames, u16 num_classes
    repeated: u16 label, f32[frames * joints * 3] coords (frame, joint, xyz)

The JSON-lines variant holds one object per line with ``label``, ``coords``
(frames x joints x 3 nested lists) and an optional ``source_id``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import DatasetProfile, SkeletonDataset

MAGIC = b"CGLSKEL1"
_HEADER = struct.Struct("<8sIHHH")
_LABEL = struct.Struct("<H")


class DatasetFormatError(ValueError):
    """Malformed container; carries the record index and/or byte offset."""

    def __init__(self, message: str, record: int | None = None, offset: int | None = None):
        self.record = record
        self.offset = offset
        where = []
        if record is not None:
            where.append(f"record {record}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def save_dataset(path, dataset: SkeletonDataset) -> Path:
    path = Path(path)
    if path.suffix == ".jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for i in range(len(dataset)):
                row = {
                    "label": int(dataset.labels[i]),
                    "source_id": dataset.source_ids[i],
                    "coords": dataset.coords[i].tolist(),
                }
                fh.write(json.dumps(row) + "\n")
        return path
    n, frames, joints, _ = dataset.coords.shape
    for name, value in (("joints", joints), ("frames", frames), ("num_classes", dataset.num_classes)):
        if value > 0xFFFF:
            raise ValueError(f"{name}={value} does not fit the u16 header field")
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, joints, frames, dataset.num_classes))
        for i in range(n):
            fh.write(_LABEL.pack(int(dataset.labels[i])))
            fh.write(dataset.coords[i].astype("<f4").tobytes())
    return path


def _check_profile(profile: DatasetProfile | None, joints, frames, num_classes, record=None, offset=None):
    if profile is None:
        return
    if (joints, frames) != (profile.joints, profile.frames):
        raise DatasetFormatError(
            f"shape mismatch: got {joints} joints x {frames} frames, "
            f"profile {profile.name!r} expects {profile.joints} x {profile.frames}",
            record=record,
            offset=offset,
        )
    if num_classes is not None and num_classes != profile.num_classes:
        raise DatasetFormatError(
            f"file declares {num_classes} classes, profile expects {profile.num_classes}",
            offset=offset,
        )


def load_dataset(path, profile: DatasetProfile | None = None) -> SkeletonDataset:
    """Read a binary or JSON-lines container, validating against ``profile``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".jsonl":
        return _load_jsonl(path, profile)
    return _load_binary(path, profile)


def _load_binary(path: Path, profile: DatasetProfile | None) -> SkeletonDataset:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("truncated header", offset=len(raw))
    magic, n, joints, frames, num_classes = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}", offset=0)
    if joints == 0 or frames == 0 or num_classes == 0:
        raise DatasetFormatError("header sizes must be positive", offset=8)
    _check_profile(profile, joints, frames, num_classes, offset=_HEADER.size)
    values = frames * joints * 3
    rec_size = _LABEL.size + 4 * values
    coords = np.empty((n, frames, joints, 3))
    labels = np.empty(n, dtype=np.int64)
    offset = _HEADER.size
    for i in range(n):
        if offset + rec_size > len(raw):
            raise DatasetFormatError(
                f"truncated file: record needs {rec_size} bytes, {len(raw) - offset} left",
                record=i,
                offset=offset,
            )
        (label,) = _LABEL.unpack_from(raw, offset)
        if label >= num_classes:
            raise DatasetFormatError(f"unknown class id {label}", record=i, offset=offset)
        block = np.frombuffer(raw, dtype="<f4", count=values, offset=offset + _LABEL.size)
        if not np.isfinite(block).all():
            raise DatasetFormatError("non-finite coordinate", record=i, offset=offset)
        coords[i] = block.reshape(frames, joints, 3)
        labels[i] = label
        offset += rec_size
    if offset != len(raw):
        raise DatasetFormatError(f"{len(raw) - offset} trailing bytes", offset=offset)
    return SkeletonDataset(coords, labels, num_classes, name=path.stem)


def _load_jsonl(path: Path, profile: DatasetProfile | None) -> SkeletonDataset:
    coords, labels, ids = [], [], []
    shape = None
    with path.open("r", encoding="utf-8") as fh:
        for i, line in enumerate(l for l in fh if l.strip()):
            try:
                row = json.loads(line)
                label = int(row["label"])
                arr = np.asarray(row["coords"], dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"malformed record: {exc}", record=i) from None
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise DatasetFormatError(f"coords must be frames x joints x 3, got {arr.shape}", record=i)
            _check_profile(profile, arr.shape[1], arr.shape[0], None, record=i)
            if shape is not None and arr.shape != shape:
                raise DatasetFormatError(f"shape mismatch: {arr.shape} vs {shape}", record=i)
            shape = arr.shape
            if not np.isfinite(arr).all():
                raise DatasetFormatError("non-finite coordinate", record=i)
            num_classes = profile.num_classes if profile else None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DatasetFormatError(f"unknown class id {label}", record=i)
            coords.append(arr)
            labels.append(label)
            ids.append(str(row.get("source_id", f"{path.stem}:{i}")))
    if not coords:
        raise DatasetFormatError("no records")
    num_classes = profile.num_classes if profile else max(labels) + 1
    return SkeletonDataset(np.stack(coords), np.asarray(labels), num_classes, tuple(ids), name=path.stem)
