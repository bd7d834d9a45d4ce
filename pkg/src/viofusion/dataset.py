"""Dataset container and pose-file IO.

On disk a dataset is a directory holding ``manifest.json`` plus a single
little-endian payload ``data.bin``. The manifest carries the format
version, shared dims, and one entry per sequence: id, frame count, byte
offset/length into the payload, a sha256 of the record bytes, and an echo
of the generating spec. Poses are stored at 64-bit, observations at
32-bit; writing is deterministic, so identical inputs give bit-identical
directories.

Corruption detection: the per-record sha256 is checked first, so any
byte damage inside a record (including a shaved tail) reports a checksum
failure; a truncation error is reserved for payloads so short that a
record from the manifest does not even start inside the file.

Pose text files use the KITTI layout: one line per frame, 12 whitespace-
separated reals forming the row-major top 3x4 of the world-from-body
transform, at 12 significant digits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import (
    ContractError,
    DatasetChecksumError,
    DatasetTruncatedError,
    DatasetVersionError,
    ParseError,
    ShapeError,
)
from .synthetic import SequenceRecord, TrajectorySpec

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "data.bin"


@dataclass
class SequenceSample:
    """One training window: n-1 adjacent frame pairs and their truth.

    A window spans n image frames; observations and per-step relative
    poses exist per adjacent pair, so all arrays here have n-1 rows.
    ``gt_seq`` is the pose of the last frame in the first frame's body
    coordinates.
    """

    pairs: np.ndarray  # (n-1, 2, H, W) float32
    imu: np.ndarray  # (n-1, 6, L) float32
    gt_rel: np.ndarray  # (n-1, 6) float64
    gt_seq: np.ndarray  # (6,) float64
    seq_id: str = ""
    start: int = 0


def window_at(record: SequenceRecord, start: int, n: int) -> SequenceSample:
    """Cut the n-frame window starting at frame ``start``."""
    if n < 2:
        raise ContractError(f"window length must be >= 2, got {n}")
    if start < 0 or start + n > record.poses.shape[0]:
        raise ContractError(
            f"window [{start}, {start + n}) outside sequence of {record.poses.shape[0]} frames"
        )
    gt_seq = geo.transform_to_pose(
        geo.relative_transform(record.poses[start], record.poses[start + n - 1])
    )
    return SequenceSample(
        pairs=record.pairs[start : start + n - 1],
        imu=record.imu[start : start + n - 1],
        gt_rel=record.rel_poses[start : start + n - 1],
        gt_seq=gt_seq,
        seq_id=record.seq_id,
        start=start,
    )


def window_starts(record: SequenceRecord, n: int):
    """All valid window start frames for length-n windows."""
    return range(record.poses.shape[0] - n + 1)


# -- binary container -----------------------------------------------------


def _record_bytes(record: SequenceRecord) -> bytes:
    parts = [
        np.ascontiguousarray(record.poses, dtype="<f8").tobytes(),
        np.ascontiguousarray(record.rel_poses, dtype="<f8").tobytes(),
        np.ascontiguousarray(record.pairs, dtype="<f4").tobytes(),
        np.ascontiguousarray(record.imu, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def write_dataset(path, records) -> dict:
    """Write records to directory ``path``; returns the manifest dict."""
    records = list(records)
    if not records:
        raise ContractError("write_dataset: no records")
    image_size = records[0].pairs.shape[2]
    imu_samples = records[0].imu.shape[2]
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    with open(os.path.join(path, PAYLOAD_NAME), "wb") as payload:
        for rec in records:
            if rec.pairs.shape[2] != image_size or rec.imu.shape[2] != imu_samples:
                raise ShapeError(
                    f"record {rec.seq_id}: dims differ from the first record"
                )
            blob = _record_bytes(rec)
            payload.write(blob)
            entries.append(
                {
                    "id": rec.seq_id,
                    "n_frames": int(rec.poses.shape[0]),
                    "offset": offset,
                    "length": len(blob),
                    "sha256": hashlib.sha256(blob).hexdigest(),
                    "spec": dataclasses.asdict(rec.spec),
                }
            )
            offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "image_size": int(image_size),
        "imu_samples": int(imu_samples),
        "sequences": entries,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(path) -> dict:
    with open(os.path.join(path, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(
            f"dataset format version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    return manifest


def read_dataset(path):
    """Load every sequence; verifies checksums and structural sizes."""
    manifest = read_manifest(path)
    image_size = manifest["image_size"]
    imu_samples = manifest["imu_samples"]
    payload_path = os.path.join(path, PAYLOAD_NAME)
    file_size = os.path.getsize(payload_path)
    records = []
    with open(payload_path, "rb") as payload:
        for entry in manifest["sequences"]:
            offset, length = entry["offset"], entry["length"]
            if offset >= file_size and length > 0:
                raise DatasetTruncatedError(
                    f"sequence {entry['id']}: record at offset {offset} beyond "
                    f"payload of {file_size} bytes"
                )
            payload.seek(offset)
            blob = payload.read(length)
            digest = hashlib.sha256(blob).hexdigest()
            if digest != entry["sha256"]:
                raise DatasetChecksumError(
                    f"sequence {entry['id']}: payload checksum mismatch"
                )
            records.append(_parse_record(entry, blob, image_size, imu_samples))
    return records


def _parse_record(entry, blob, image_size, imu_samples) -> SequenceRecord:
    n = entry["n_frames"]
    n_int = n - 1
    sizes = [
        n * 16 * 8,
        n_int * 6 * 8,
        n_int * 2 * image_size * image_size * 4,
        n_int * 6 * imu_samples * 4,
    ]
    if len(blob) != sum(sizes):
        raise DatasetTruncatedError(
            f"sequence {entry['id']}: record is {len(blob)} bytes, "
            f"frame count implies {sum(sizes)}"
        )
    views = []
    cursor = 0
    for size in sizes:
        views.append(blob[cursor : cursor + size])
        cursor += size
    poses = np.frombuffer(views[0], dtype="<f8").reshape(n, 4, 4).copy()
    rel = np.frombuffer(views[1], dtype="<f8").reshape(n_int, 6).copy()
    pairs = (
        np.frombuffer(views[2], dtype="<f4")
        .reshape(n_int, 2, image_size, image_size)
        .copy()
    )
    imu = np.frombuffer(views[3], dtype="<f4").reshape(n_int, 6, imu_samples).copy()
    spec = TrajectorySpec(**entry["spec"])
    return SequenceRecord(
        seq_id=entry["id"], spec=spec, poses=poses, rel_poses=rel, pairs=pairs, imu=imu
    )


# -- KITTI pose text -------------------------------------------------------


def write_kitti_poses(path, poses):
    """One line per pose: row-major top 3x4 at 12 significant digits."""
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[1:] != (4, 4):
        raise ShapeError(f"write_kitti_poses: expected (n, 4, 4), got {poses.shape}")
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            fields = pose[:3, :4].reshape(-1)
            fh.write(" ".join(f"{v:.12g}" for v in fields) + "\n")


def read_kitti_poses(path):
    """Inverse of write_kitti_poses; errors carry the 1-based line number."""
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise ParseError(
                    f"expected 12 fields, got {len(fields)}", line=lineno
                )
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            pose = np.eye(4)
            pose[:3, :4] = np.array(values).reshape(3, 4)
            poses.append(pose)
    if not poses:
        raise ParseError("pose file contains no poses")
    return np.stack(poses)
