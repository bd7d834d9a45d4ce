"""Trajectory accumulation, drift and position-error metrics, reports.

The drift metric follows the KITTI odometry convention: for every start
frame (configurable stride) and every segment length, find the first
frame at which the ground-truth arc length has grown by that segment
length, compare the predicted and true relative transforms over the
segment, and express translation error as a percentage of the segment
length and rotation error as degrees per 100 m. Per-length values are
means over start frames; the reported averages are means over the
per-length values actually computed.

Trajectories short of the standard 100..800 m lengths can use the scaled
10..80 m ladder, which preserves the metric's structure at desk scale.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ContractError, EmptyReportError, ShapeError

STANDARD_LENGTHS = tuple(range(100, 900, 100))
SCALED_LENGTHS = tuple(range(10, 90, 10))
REORTHONORMALIZE_EVERY = 100


def accumulate_trajectory(rel_poses, origin=None):
    """Chain per-step relative poses into an absolute series.

    ``rel_poses`` is (n, 6); the result is (n+1, 4, 4) with the origin
    first. Rotations are re-orthonormalized every 100 compositions; this
    is the evaluation path, where drift hygiene beats differentiability.
    """
    rel_poses = np.asarray(rel_poses, dtype=np.float64)
    if rel_poses.ndim != 2 or rel_poses.shape[1] != 6:
        raise ShapeError(f"accumulate_trajectory: expected (n, 6), got {rel_poses.shape}")
    current = np.eye(4) if origin is None else np.asarray(origin, dtype=np.float64).copy()
    if current.shape != (4, 4):
        raise ShapeError(f"accumulate_trajectory: origin must be 4x4, got {current.shape}")
    out = np.empty((rel_poses.shape[0] + 1, 4, 4))
    out[0] = current
    for i, pose in enumerate(rel_poses, start=1):
        current = current @ geo.pose_to_transform(pose)
        if i % REORTHONORMALIZE_EVERY == 0:
            current[:3, :3] = geo.reorthonormalize(current[:3, :3])
        out[i] = current
    return out


def arc_lengths(poses):
    """Cumulative path length along a pose series, meters."""
    poses = np.asarray(poses, dtype=np.float64)
    steps = np.linalg.norm(np.diff(poses[:, :3, 3], axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _first_frame_at(dist, start, length):
    """Index of the first frame whose arc length is >= dist[start] + length."""
    target = dist[start] + length
    idx = int(np.searchsorted(dist, target, side="left"))
    return idx if idx < len(dist) else None


def kitti_drift(pred, gt, lengths=None, stride=1, scaled=False):
    """Sub-sequence drift: per-length and averaged t_rel %, r_rel deg/100m."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[1:] != (4, 4):
        raise ShapeError(
            f"kitti_drift: series must both be (n, 4, 4), got {pred.shape} and {gt.shape}"
        )
    if stride < 1:
        raise ContractError(f"kitti_drift: stride must be >= 1, got {stride}")
    if lengths is None:
        lengths = SCALED_LENGTHS if scaled else STANDARD_LENGTHS
    lengths = sorted(lengths)
    dist = arc_lengths(gt)
    t_sums = {l: 0.0 for l in lengths}
    r_sums = {l: 0.0 for l in lengths}
    counts = {l: 0 for l in lengths}
    for start in range(0, pred.shape[0], stride):
        for length in lengths:
            end = _first_frame_at(dist, start, length)
            if end is None:
                break  # longer lengths cannot fit from this start either
            gt_rel = geo.relative_transform(gt[start], gt[end])
            pred_rel = geo.relative_transform(pred[start], pred[end])
            # identical relatives have zero error by definition; skipping the
            # matrix algebra keeps the pred == gt case exact, not just tiny
            if not np.array_equal(pred_rel, gt_rel):
                err = geo.invert_transform(pred_rel) @ gt_rel
                t_sums[length] += 100.0 * float(np.linalg.norm(err[:3, 3])) / length
                r_sums[length] += np.degrees(geo.rotation_angle(err[:3, :3])) * 100.0 / length
            counts[length] += 1
    t_rel = {l: t_sums[l] / counts[l] for l in lengths if counts[l] > 0}
    r_rel = {l: r_sums[l] / counts[l] for l in lengths if counts[l] > 0}
    if not t_rel:
        raise EmptyReportError(
            f"no sub-segment of lengths {lengths} fits a trajectory of "
            f"{dist[-1]:.1f} m arc length; consider the scaled lengths option"
        )
    t_avg = float(np.mean(list(t_rel.values())))
    r_avg = float(np.mean(list(r_rel.values())))
    return t_rel, r_rel, t_avg, r_avg


def hpe(pred, gt):
    """Horizontal position error: RMSE of planar (x, y) distances."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(
            f"hpe: series lengths differ, {pred.shape} vs {gt.shape}"
        )
    if pred.ndim != 3 or pred.shape[1:] != (4, 4):
        raise ShapeError(f"hpe: expected (n, 4, 4) series, got {pred.shape}")
    diff = pred[:, :2, 3] - gt[:, :2, 3]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def window_composition_hpe(pred_rel, gt_poses, window):
    """Planar RMSE of composed window-end poses against ground truth.

    For every length-``window`` frame window, the predicted per-step poses
    are chained into a first-to-last transform and its planar translation
    is compared with the true one. This measures exactly what the
    whole-window loss term constrains.
    """
    pred_rel = np.asarray(pred_rel, dtype=np.float64)
    gt_poses = np.asarray(gt_poses, dtype=np.float64)
    if pred_rel.shape[0] != gt_poses.shape[0] - 1:
        raise ContractError(
            f"window_composition_hpe: {pred_rel.shape[0]} relatives do not match "
            f"{gt_poses.shape[0]} poses"
        )
    if window < 2 or window > gt_poses.shape[0]:
        raise ContractError(f"window_composition_hpe: bad window {window}")
    sq = []
    for start in range(gt_poses.shape[0] - window + 1):
        chain = geo.compose_chain(
            [geo.pose_to_transform(p) for p in pred_rel[start : start + window - 1]]
        )
        gt_rel = geo.relative_transform(gt_poses[start], gt_poses[start + window - 1])
        d = chain[:2, 3] - gt_rel[:2, 3]
        sq.append(float(d @ d))
    return float(np.sqrt(np.mean(sq)))


@dataclass
class EvalReport:
    """Drift and position error for one evaluated trajectory set."""

    t_rel_percent: dict
    r_rel_deg_per_100m: dict
    t_rel_avg: float
    r_rel_avg: float
    hpe_m: float
    frame_count: int
    config: dict = field(default_factory=dict)

    def validate(self):
        if set(self.t_rel_percent) != set(self.r_rel_deg_per_100m):
            raise ContractError("report: translation and rotation length sets differ")
        for name, entries in (("t_rel", self.t_rel_percent),
                              ("r_rel", self.r_rel_deg_per_100m)):
            for length, value in entries.items():
                if value < 0:
                    raise ContractError(f"report: negative {name} at length {length}")
        if self.hpe_m < 0 or self.frame_count < 0:
            raise ContractError("report: negative scalar field")
        if self.t_rel_percent:
            t_avg = float(np.mean(list(self.t_rel_percent.values())))
            r_avg = float(np.mean(list(self.r_rel_deg_per_100m.values())))
            if abs(t_avg - self.t_rel_avg) > 1e-9 or abs(r_avg - self.r_rel_avg) > 1e-9:
                raise ContractError("report: averages do not match per-length entries")


def evaluate_series(pred, gt, config_echo=None, stride=1, scaled=True, lengths=None):
    """Drift + HPE for one predicted/true trajectory pair."""
    t_rel, r_rel, t_avg, r_avg = kitti_drift(
        pred, gt, lengths=lengths, stride=stride, scaled=scaled
    )
    report = EvalReport(
        t_rel_percent=t_rel,
        r_rel_deg_per_100m=r_rel,
        t_rel_avg=t_avg,
        r_rel_avg=r_avg,
        hpe_m=hpe(pred, gt),
        frame_count=int(np.asarray(pred).shape[0]),
        config=config_echo or {},
    )
    report.validate()
    return report


def emit_report(report: EvalReport, json_path, csv_path=None):
    """Write the report as sorted JSON plus a per-length CSV."""
    report.validate()
    payload = {
        "t_rel_percent": {str(k): report.t_rel_percent[k] for k in report.t_rel_percent},
        "r_rel_deg_per_100m": {
            str(k): report.r_rel_deg_per_100m[k] for k in report.r_rel_deg_per_100m
        },
        "t_rel_avg": report.t_rel_avg,
        "r_rel_avg": report.r_rel_avg,
        "hpe_m": report.hpe_m,
        "frame_count": report.frame_count,
        "config": report.config,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is None:
        csv_path = os.path.splitext(str(json_path))[0] + ".csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["length_m", "t_rel_percent", "r_rel_deg_per_100m"])
    for length in sorted(report.t_rel_percent):
        writer.writerow(
            [length, repr(report.t_rel_percent[length]), repr(report.r_rel_deg_per_100m[length])]
        )
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    return csv_path


def read_report(json_path) -> EvalReport:
    with open(json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    report = EvalReport(
        t_rel_percent={int(k): v for k, v in payload["t_rel_percent"].items()},
        r_rel_deg_per_100m={int(k): v for k, v in payload["r_rel_deg_per_100m"].items()},
        t_rel_avg=payload["t_rel_avg"],
        r_rel_avg=payload["r_rel_avg"],
        hpe_m=payload["hpe_m"],
        frame_count=payload["frame_count"],
        config=payload.get("config", {}),
    )
    report.validate()
    return report
