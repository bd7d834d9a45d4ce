"""Rigid-body pose algebra and the pose regression losses.

Two parallel implementations live here on purpose. The plain-numpy half is
used by data generation and evaluation, where nothing needs gradients. The
Tensor half mirrors it op for op so the sequence loss can compose predicted
transforms differentiably. Keeping both next to each other makes drift
between them easy to spot, and the tests cross-check one against the other.

Conventions (used everywhere in this package):
  * Euler vector is (roll, pitch, yaw), intrinsic Z-Y-X:
    R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
  * A transform is 4x4 [[R, t], [0, 1]] mapping body coordinates to world.
  * Relative pose of frame j seen from frame i is inv(T_i) @ T_j.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, GimbalLockError, ShapeError
from .tensor import Tensor

GIMBAL_MARGIN = 1e-6


# -- numpy side ---------------------------------------------------------


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def euler_to_rot(euler):
    """(roll, pitch, yaw) -> 3x3 rotation, intrinsic Z-Y-X."""
    euler = np.asarray(euler, dtype=np.float64)
    if euler.shape != (3,):
        raise ShapeError(f"euler_to_rot: expected shape (3,), got {euler.shape}")
    roll, pitch, yaw = euler
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def rot_to_euler(rot):
    """Inverse of euler_to_rot; raises near pitch = +-pi/2."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise ShapeError(f"rot_to_euler: expected shape (3, 3), got {rot.shape}")
    s = float(-rot[2, 0])
    if np.isfinite(s):
        # non-finite input is not gimbal lock; let NaN flow to the caller
        s = min(1.0, max(-1.0, s))
        if np.pi / 2 - abs(np.arcsin(s)) < GIMBAL_MARGIN:
            raise GimbalLockError(
                f"rot_to_euler: pitch within {GIMBAL_MARGIN} of +-pi/2, roll and yaw are not separable"
            )
    pitch = np.arcsin(s)
    roll = np.arctan2(rot[2, 1], rot[2, 2])
    yaw = np.arctan2(rot[1, 0], rot[0, 0])
    return np.array([roll, pitch, yaw], dtype=np.float64)


def check_rotation(rot, tol=1e-6):
    """Orthonormality and det(+1) check; raises ContractError on failure."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise ShapeError(f"check_rotation: expected shape (3, 3), got {rot.shape}")
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    det = np.linalg.det(rot)
    if err > tol or abs(det - 1.0) > tol:
        raise ContractError(
            f"check_rotation: not a rotation (orthogonality err {err:.2e}, det {det:.8f})"
        )
    return rot


def reorthonormalize(rot):
    """Nearest rotation matrix in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(rot, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def make_transform(rot, trans):
    rot = np.asarray(rot, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    if rot.shape != (3, 3) or trans.shape != (3,):
        raise ShapeError(f"make_transform: got rot {rot.shape}, trans {trans.shape}")
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = trans
    return out


def pose_to_transform(pose):
    """6-vector (tx, ty, tz, roll, pitch, yaw) -> 4x4 transform."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (6,):
        raise ShapeError(f"pose_to_transform: expected shape (6,), got {pose.shape}")
    return make_transform(euler_to_rot(pose[3:]), pose[:3])


def transform_to_pose(transform):
    """4x4 transform -> 6-vector (tx, ty, tz, roll, pitch, yaw)."""
    transform = np.asarray(transform, dtype=np.float64)
    if transform.shape != (4, 4):
        raise ShapeError(f"transform_to_pose: expected shape (4, 4), got {transform.shape}")
    return np.concatenate([transform[:3, 3], rot_to_euler(transform[:3, :3])])


def invert_transform(transform):
    transform = np.asarray(transform, dtype=np.float64)
    if transform.shape != (4, 4):
        raise ShapeError(f"invert_transform: expected shape (4, 4), got {transform.shape}")
    rot = transform[:3, :3]
    out = np.eye(4)
    out[:3, :3] = rot.T
    out[:3, 3] = -rot.T @ transform[:3, 3]
    return out


def relative_transform(t_from, t_to):
    """Pose of ``t_to`` expressed in the frame of ``t_from``."""
    return invert_transform(t_from) @ t_to


def rotation_angle(rot):
    """Geodesic angle of a rotation in radians."""
    tr = float(np.trace(np.asarray(rot)[:3, :3]))
    return float(np.arccos(min(1.0, max(-1.0, (tr - 1.0) / 2.0))))


def compose_chain(transforms):
    """Left-to-right product of 4x4 transforms. No re-orthonormalization."""
    transforms = list(transforms)
    if not transforms:
        raise ContractError("compose_chain: empty transform list")
    total = np.asarray(transforms[0], dtype=np.float64)
    if total.shape != (4, 4):
        raise ShapeError(f"compose_chain: expected 4x4 transforms, got {total.shape}")
    for t in transforms[1:]:
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (4, 4):
            raise ShapeError(f"compose_chain: expected 4x4 transforms, got {t.shape}")
        total = total @ t
    return total


# -- differentiable side -------------------------------------------------


def _row(items):
    return T.concat([i.reshape(1) for i in items], axis=0).reshape(1, 3)


def euler_to_rot_t(euler: Tensor) -> Tensor:
    """Differentiable euler_to_rot for a (3,) tensor."""
    if euler.shape != (3,):
        raise ShapeError(f"euler_to_rot_t: expected shape (3,), got {euler.shape}")
    roll, pitch, yaw = euler[0], euler[1], euler[2]
    cr, sr = roll.cos(), roll.sin()
    cp, sp = pitch.cos(), pitch.sin()
    cy, sy = yaw.cos(), yaw.sin()
    # rows of Rz(yaw) @ Ry(pitch) @ Rx(roll), expanded by hand
    r00 = cy * cp
    r01 = cy * sp * sr - sy * cr
    r02 = cy * sp * cr + sy * sr
    r10 = sy * cp
    r11 = sy * sp * sr + cy * cr
    r12 = sy * sp * cr - cy * sr
    r20 = -sp
    r21 = cp * sr
    r22 = cp * cr
    return T.concat([_row([r00, r01, r02]), _row([r10, r11, r12]), _row([r20, r21, r22])], axis=0)


def rot_to_euler_t(rot: Tensor) -> Tensor:
    """Differentiable rot_to_euler; same gimbal guard on the values."""
    if rot.shape != (3, 3):
        raise ShapeError(f"rot_to_euler_t: expected shape (3, 3), got {rot.shape}")
    s = float(-rot.data[2, 0])
    if np.isfinite(s) and np.pi / 2 - abs(np.arcsin(min(1.0, max(-1.0, s)))) < GIMBAL_MARGIN:
        # non-finite input is not gimbal lock; NaN flows to the loss check
        raise GimbalLockError(
            f"rot_to_euler_t: pitch within {GIMBAL_MARGIN} of +-pi/2, roll and yaw are not separable"
        )
    pitch = (-rot[2, 0]).asin()
    roll = T.atan2(rot[2, 1], rot[2, 2])
    yaw = T.atan2(rot[1, 0], rot[0, 0])
    return T.concat([roll.reshape(1), pitch.reshape(1), yaw.reshape(1)], axis=0)


def pose_to_transform_t(pose: Tensor) -> Tensor:
    """Differentiable pose_to_transform for a (6,) tensor."""
    if pose.shape != (6,):
        raise ShapeError(f"pose_to_transform_t: expected shape (6,), got {pose.shape}")
    rot = euler_to_rot_t(pose[3:6])
    top = T.concat([rot, pose[0:3].reshape(3, 1)], axis=1)
    bottom = Tensor(np.array([[0.0, 0.0, 0.0, 1.0]], dtype=pose.dtype))
    return T.concat([top, bottom], axis=0)


def compose_poses_t(poses: Tensor) -> Tensor:
    """Chain per-step 6-vector poses (rows of an (n, 6) tensor) into one.

    Equivalent to converting each row to a transform, multiplying them in
    order, and reading the pose back out. Gradients flow to every row.
    """
    if poses.ndim != 2 or poses.shape[1] != 6:
        raise ShapeError(f"compose_poses_t: expected shape (n, 6), got {poses.shape}")
    if poses.shape[0] == 0:
        raise ContractError("compose_poses_t: need at least one pose")
    total = pose_to_transform_t(poses[0])
    for i in range(1, poses.shape[0]):
        total = T.matmul(total, pose_to_transform_t(poses[i]))
    trans = total[0:3, 3]
    euler = rot_to_euler_t(total[0:3, 0:3])
    return T.concat([trans, euler], axis=0)


# -- losses ---------------------------------------------------------------


def _rmse_t(diff: Tensor) -> Tensor:
    return diff.square().mean().sqrt()


def frame_loss(pred: Tensor, target: np.ndarray, rot_weight: float = 100.0) -> Tensor:
    """Per-frame pose loss: RMSE(translation) + weight * RMSE(euler).

    ``pred`` is (n, 6) with columns (tx, ty, tz, roll, pitch, yaw); the
    RMSE pools over frames and the 3 components together.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != 6:
        raise ShapeError(f"frame_loss: expected pred (n, 6), got {pred.shape}")
    if target.shape != pred.shape:
        raise ShapeError(f"frame_loss: target shape {target.shape} != pred shape {pred.shape}")
    diff = pred - Tensor(target.astype(pred.dtype))
    trans_rmse = _rmse_t(diff[:, 0:3])
    rot_rmse = _rmse_t(diff[:, 3:6])
    return trans_rmse + rot_weight * rot_rmse


def sequence_loss(pred_windows, targets: np.ndarray, rot_weight: float = 100.0) -> Tensor:
    """Whole-window pose loss.

    Each element of ``pred_windows`` is an (n-1, 6) tensor of per-step
    poses; they are composed into a single start-to-end pose which is
    compared against the matching row of ``targets`` (w, 6). Structure is
    the same as frame_loss, pooling over windows and components.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if not pred_windows:
        raise ContractError("sequence_loss: empty window list")
    if targets.shape != (len(pred_windows), 6):
        raise ShapeError(
            f"sequence_loss: targets shape {targets.shape} != ({len(pred_windows)}, 6)"
        )
    composed = [compose_poses_t(w).reshape(1, 6) for w in pred_windows]
    pred = T.concat(composed, axis=0)
    diff = pred - Tensor(targets.astype(pred.dtype))
    trans_rmse = _rmse_t(diff[:, 0:3])
    rot_rmse = _rmse_t(diff[:, 3:6])
    return trans_rmse + rot_weight * rot_rmse


def total_loss(frame_term: Tensor, seq_term=None, step=None) -> Tensor:
    """Sum of the loss terms; rejects NaN with training-step context.

    ``seq_term`` may be None when the multi-state constraint is disabled,
    in which case the total is the frame term alone.
    """
    from .errors import TrainingDivergedError

    terms = [frame_term] + ([seq_term] if seq_term is not None else [])
    for t in terms:
        if not np.isfinite(t.data):
            raise TrainingDivergedError("loss is not finite", step=step)
    if seq_term is None:
        return frame_term
    return frame_term + seq_term
