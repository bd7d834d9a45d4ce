"""Independent reference implementations used to cross-check the package.

Everything here is written against the metric definitions directly, with
plain loops and scipy where convenient, sharing no code with the package
internals it verifies.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

STANDARD_LENGTHS = [100, 200, 300, 400, 500, 600, 700, 800]
SCALED_LENGTHS = [10, 20, 30, 40, 50, 60, 70, 80]


def rotation_zyx(euler):
    """Rotation from (roll, pitch, yaw) via scipy intrinsic Z-Y-X."""
    roll, pitch, yaw = euler
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def rotation_angle_scipy(rot):
    return float(np.linalg.norm(Rotation.from_matrix(rot).as_rotvec()))


def trajectory_arc(poses):
    """Cumulative path length along a pose series; plain loop."""
    dist = [0.0]
    for i in range(1, len(poses)):
        step = poses[i][:3, 3] - poses[i - 1][:3, 3]
        dist.append(dist[-1] + float(np.linalg.norm(step)))
    return dist


def drift_reference(pred, gt, lengths, stride=1):
    """Loop-based segment drift; mirrors the published metric definition.

    For every start (at the given stride) and every segment length, finds
    the first frame whose ground-truth arc length reaches start+length,
    forms the relative error transform between the predicted and true
    segment motions, and normalizes by the nominal length. Returns
    per-length mean translation %, mean rotation deg/100m, and the two
    averages over lengths.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    dist = trajectory_arc(gt)
    t_bins = {length: [] for length in lengths}
    r_bins = {length: [] for length in lengths}
    for start in range(0, len(gt), stride):
        for length in lengths:
            end = None
            for j in range(start, len(gt)):
                if dist[j] >= dist[start] + length:
                    end = j
                    break
            if end is None:
                break
            pred_rel = np.linalg.inv(pred[start]) @ pred[end]
            gt_rel = np.linalg.inv(gt[start]) @ gt[end]
            err = np.linalg.inv(pred_rel) @ gt_rel
            t_err = float(np.linalg.norm(err[:3, 3]))
            r_err = rotation_angle_scipy(err[:3, :3])
            t_bins[length].append(100.0 * t_err / length)
            r_bins[length].append(np.degrees(r_err) * 100.0 / length)
    t_rel = {l: float(np.mean(v)) for l, v in t_bins.items() if v}
    r_rel = {l: float(np.mean(v)) for l, v in r_bins.items() if v}
    t_avg = float(np.mean(list(t_rel.values()))) if t_rel else float("nan")
    r_avg = float(np.mean(list(r_rel.values()))) if r_rel else float("nan")
    return t_rel, r_rel, t_avg, r_avg


def hpe_reference(pred, gt):
    """Horizontal position RMSE via a plain loop."""
    sq = []
    for p, g in zip(pred, gt):
        dx = p[0, 3] - g[0, 3]
        dy = p[1, 3] - g[1, 3]
        sq.append(dx * dx + dy * dy)
    return float(np.sqrt(np.mean(sq)))


def random_walk_poses(rng, n, step_scale=0.5, angle_scale=0.1):
    """A jagged but valid trajectory for metric cross-checks."""
    poses = [np.eye(4)]
    for _ in range(n - 1):
        angles = rng.normal(0.0, angle_scale, 3)
        rot = Rotation.from_euler("ZYX", angles).as_matrix()
        step = np.eye(4)
        step[:3, :3] = rot
        step[:3, 3] = rng.normal(0.0, step_scale, 3) + [step_scale * 2, 0, 0]
        poses.append(poses[-1] @ step)
    return np.stack(poses)


def numeric_gradient(fn, x, eps=1e-6):
    """Dense central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = fn(x)
        flat[i] = keep - eps
        down = fn(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * eps)
    return grad
