"""Deterministic synthetic data: trajectories, IMU streams, frame pairs.

A trajectory is a closed-form mixture of sinusoids plus linear drift, so
position, velocity, acceleration, orientation, and body rates all have
exact analytic values at any time; the IMU stream is sampled from those,
never numerically integrated. Degenerate specs stay exactly degenerate:
zero speed and zero yaw rate give a stationary platform, a pure constant
velocity gives exactly linear motion, a pure yaw rate gives exactly
(0, 0, rate) gyro output. The wiggle harmonics on every channel scale with
velocity * yaw_rate, which is what makes those special cases exact.

The visual signal is a seeded band-limited texture warped by a 2-D affine
map derived from the relative pose: x/y translation scaled to pixels and
in-plane rotation from the yaw delta. It is not a projective render; it is
a learnable, pose-correlated signal whose geometry the tests can verify.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from . import geometry as geo

GRAVITY = 9.81  # m/s^2, world z-up
PITCH_LIMIT = np.pi / 2 - 0.1
PIXELS_PER_METER = 40.0
_HARMONICS = 2
# channel order inside the harmonic table
_CHANNELS = ("x", "y", "z", "roll", "pitch", "yaw")
_IMU_NOISE_STREAM = 1


@dataclass
class TrajectorySpec:
    """Everything that determines one synthetic sequence."""

    seed: int = 0
    duration_s: float = 6.0
    image_rate_hz: int = 10
    imu_rate_hz: int = 100
    velocity_mps: float = 1.0
    yaw_rate_rps: float = 0.3
    texture_seed: int = 7
    noise_sigma_gyro: float = 0.0
    noise_sigma_accel: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be > 0, got {self.duration_s}")
        if self.image_rate_hz < 1 or self.imu_rate_hz < 1:
            raise ConfigError("image_rate_hz and imu_rate_hz must be >= 1")
        if self.imu_rate_hz % self.image_rate_hz != 0:
            raise ConfigError(
                f"imu_rate_hz ({self.imu_rate_hz}) must be divisible by "
                f"image_rate_hz ({self.image_rate_hz})"
            )
        if self.velocity_mps < 0 or self.yaw_rate_rps < 0:
            raise ConfigError("velocity_mps and yaw_rate_rps must be >= 0")
        if self.noise_sigma_gyro < 0 or self.noise_sigma_accel < 0:
            raise ConfigError("noise sigmas must be >= 0")

    @property
    def imu_samples(self):
        """Samples per inter-frame interval, both endpoints included."""
        return self.imu_rate_hz // self.image_rate_hz + 1

    @property
    def n_frames(self):
        return int(np.floor(self.duration_s * self.image_rate_hz)) + 1


class ContinuousTrajectory:
    """Closed-form 6-DoF motion: drift + seeded sinusoid harmonics.

    Per channel: f(t) = sum_h a_h sin(w_h t + p_h), shifted so f(0) = 0.
    x additionally drifts at velocity_mps, yaw at yaw_rate_rps.
    """

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFF]))
        cross = spec.velocity_mps * spec.yaw_rate_rps
        base = {
            "x": 0.5 * cross, "y": 0.5 * cross, "z": 0.05 * cross,
            "roll": 0.05 * cross, "pitch": 0.05 * cross, "yaw": 0.1 * cross,
        }
        self.amp = np.zeros((len(_CHANNELS), _HARMONICS))
        self.freq = np.zeros_like(self.amp)
        self.phase = np.zeros_like(self.amp)
        for ci, ch in enumerate(_CHANNELS):
            # draws happen for every channel regardless of amplitude so the
            # stream layout is independent of the trajectory parameters
            u = rng.uniform(0.5, 1.5, _HARMONICS)
            w = rng.uniform(0.4, 1.6, _HARMONICS)
            p = rng.uniform(0.0, 2 * np.pi, _HARMONICS)
            self.amp[ci] = base[ch] * u / _HARMONICS
            self.freq[ci] = w
            self.phase[ci] = p
        pitch_reach = np.abs(self.amp[_CHANNELS.index("pitch")]).sum()
        if pitch_reach >= PITCH_LIMIT:
            raise ConfigError(
                f"spec produces pitch reach {pitch_reach:.3f} rad, "
                f"gimbal guard allows < {PITCH_LIMIT:.3f}"
            )

    def _f(self, ci, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        s = self.amp[ci] * np.sin(self.freq[ci] * t + self.phase[ci])
        s0 = self.amp[ci] * np.sin(self.phase[ci])
        return (s - s0).sum(axis=-1)

    def _df(self, ci, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        return (self.amp[ci] * self.freq[ci] * np.cos(self.freq[ci] * t + self.phase[ci])).sum(axis=-1)

    def _ddf(self, ci, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        return (-self.amp[ci] * self.freq[ci] ** 2 * np.sin(self.freq[ci] * t + self.phase[ci])).sum(axis=-1)

    def position(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.stack(
            [self.spec.velocity_mps * t + self._f(0, t), self._f(1, t), self._f(2, t)], axis=-1
        )

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.stack(
            [self.spec.velocity_mps + self._df(0, t), self._df(1, t), self._df(2, t)], axis=-1
        )

    def acceleration(self, t):
        return np.stack([self._ddf(0, t), self._ddf(1, t), self._ddf(2, t)], axis=-1)

    def euler(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.stack(
            [self._f(3, t), self._f(4, t), self.spec.yaw_rate_rps * t + self._f(5, t)], axis=-1
        )

    def euler_rates(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.stack(
            [self._df(3, t), self._df(4, t), self.spec.yaw_rate_rps + self._df(5, t)], axis=-1
        )

    def body_rates(self, t):
        """Gyro truth: body angular velocity from Euler angles and rates."""
        eul = np.atleast_2d(self.euler(t))
        rates = np.atleast_2d(self.euler_rates(t))
        roll, pitch = eul[:, 0], eul[:, 1]
        dr, dp, dy = rates[:, 0], rates[:, 1], rates[:, 2]
        wx = dr - dy * np.sin(pitch)
        wy = dp * np.cos(roll) + dy * np.cos(pitch) * np.sin(roll)
        wz = -dp * np.sin(roll) + dy * np.cos(pitch) * np.cos(roll)
        out = np.stack([wx, wy, wz], axis=-1)
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    def specific_force(self, t):
        """Accelerometer truth: body-frame acceleration minus gravity."""
        eul = np.atleast_2d(self.euler(t))
        acc = np.atleast_2d(self.acceleration(t))
        out = np.empty_like(acc)
        for i in range(eul.shape[0]):
            rot = geo.euler_to_rot(eul[i])
            out[i] = rot.T @ (acc[i] + np.array([0.0, 0.0, GRAVITY]))
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    def transform(self, t):
        return geo.make_transform(geo.euler_to_rot(self.euler(t)), self.position(t))


def generate_trajectory(spec: TrajectorySpec):
    """Ground-truth poses at image rate: (n_frames, 4, 4), plus the model."""
    cont = ContinuousTrajectory(spec)
    times = np.arange(spec.n_frames, dtype=np.float64) / spec.image_rate_hz
    poses = np.stack([cont.transform(t) for t in times])
    return times, poses, cont


def simulate_imu(cont: ContinuousTrajectory, spec: TrajectorySpec):
    """Per-interval IMU windows, shape (n_frames-1, 6, L).

    Channel order is (gyro_x, gyro_y, gyro_z, acc_x, acc_y, acc_z); both
    interval endpoints are sampled, so adjacent windows share one column.
    Optional additive Gaussian noise uses its own seed stream.
    """
    n_int = spec.n_frames - 1
    length = spec.imu_samples
    out = np.zeros((n_int, 6, length), dtype=np.float64)
    for i in range(n_int):
        t0 = i / spec.image_rate_hz
        ts = t0 + np.arange(length, dtype=np.float64) / spec.imu_rate_hz
        out[i, 0:3, :] = cont.body_rates(ts).T
        out[i, 3:6, :] = cont.specific_force(ts).T
    if spec.noise_sigma_gyro > 0 or spec.noise_sigma_accel > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed & 0xFFFFFFFF, _IMU_NOISE_STREAM])
        )
        out[:, 0:3, :] += spec.noise_sigma_gyro * rng.standard_normal(out[:, 0:3, :].shape)
        out[:, 3:6, :] += spec.noise_sigma_accel * rng.standard_normal(out[:, 3:6, :].shape)
    return out


# -- visual signal -----------------------------------------------------


def render_texture(seed, h, w, components=8):
    """Band-limited procedural texture in [0, 1], deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 2]))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w), dtype=np.float64)
    for _ in range(components):
        kx, ky = rng.uniform(-0.35, 0.35, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.sin(kx * xs + ky * ys + phase)
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (img - lo) / (hi - lo)


def warp_affine(img, shift_px, angle_rad):
    """Bilinear affine warp: rotate by angle about center, shift by pixels.

    For each output pixel the source location is found by undoing the
    shift then the rotation, so warping with (-shift, -angle) inverts a
    warp with (shift, angle) up to bilinear resampling. Out-of-frame
    samples are zero. The identity warp reproduces the input bit-exactly
    (integer sample coordinates, all bilinear weights hit 0 or 1).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"warp_affine: expected (H, W) image, got {img.shape}")
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xs - cx - shift_px[0]
    dy = ys - cy - shift_px[1]
    c, s = np.cos(-angle_rad), np.sin(-angle_rad)
    src_x = c * dx - s * dy + cx
    src_y = s * dx + c * dy + cy
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    def sample(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside, vals, 0.0)

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    return (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
            + v10 * fy * (1 - fx) + v11 * fy * fx)


def render_frame_pair(rel_pose, texture_seed, h, w, pixels_per_meter=PIXELS_PER_METER):
    """Reference texture plus its pose-warped target, stacked (2, H, W).

    The warp uses the in-plane components of the relative pose: x/y
    translation scaled to pixels, yaw as in-plane rotation. Warps larger
    than a quarter of the image side would push the overlap out of frame
    and are rejected.
    """
    rel_pose = np.asarray(rel_pose, dtype=np.float64)
    if rel_pose.shape != (6,):
        raise ShapeError(f"render_frame_pair: expected 6-vector pose, got {rel_pose.shape}")
    shift = np.array([rel_pose[0], rel_pose[1]]) * pixels_per_meter
    angle = float(rel_pose[5])
    corner = 0.5 * np.hypot(h - 1, w - 1)
    reach = float(np.hypot(*shift)) + 2.0 * abs(np.sin(angle / 2.0)) * corner
    if reach > min(h, w) / 4.0:
        raise ConfigError(
            f"render_frame_pair: warp reach {reach:.1f} px exceeds {min(h, w) / 4.0:.1f} "
            "(quarter of image side); motion too large for the synthetic signal"
        )
    reference = render_texture(texture_seed, h, w)
    target = warp_affine(reference, shift, angle)
    return np.stack([reference, target])


# -- sequence assembly -------------------------------------------------


@dataclass
class SequenceRecord:
    """One generated sequence: ground truth plus observations."""

    seq_id: str
    spec: TrajectorySpec
    poses: np.ndarray  # (n_frames, 4, 4) float64
    rel_poses: np.ndarray  # (n_frames-1, 6) float64
    pairs: np.ndarray  # (n_frames-1, 2, H, W) float32
    imu: np.ndarray  # (n_frames-1, 6, L) float32
    times: np.ndarray = field(default=None)


def generate_sequence(spec: TrajectorySpec, seq_index: int, image_size: int) -> SequenceRecord:
    times, poses, cont = generate_trajectory(spec)
    n_int = spec.n_frames - 1
    rel = np.zeros((n_int, 6), dtype=np.float64)
    pairs = np.zeros((n_int, 2, image_size, image_size), dtype=np.float32)
    for i in range(n_int):
        rel[i] = geo.transform_to_pose(geo.relative_transform(poses[i], poses[i + 1]))
        if np.abs(rel[i, 3:6]).max() >= np.pi:
            raise ConfigError(
                f"interval {i}: relative rotation {rel[i, 3:6]} leaves (-pi, pi)"
            )
        tex_seed = int(
            np.random.SeedSequence(
                [spec.texture_seed & 0xFFFFFFFF, seq_index, i]
            ).generate_state(1)[0]
        )
        pairs[i] = render_frame_pair(rel[i], tex_seed, image_size, image_size)
    imu = simulate_imu(cont, spec).astype(np.float32)
    return SequenceRecord(
        seq_id=f"seq{seq_index:03d}",
        spec=spec,
        poses=poses,
        rel_poses=rel,
        pairs=pairs,
        imu=imu,
        times=times,
    )


def spec_for_sequence(base: TrajectorySpec, data_seed: int, seq_index: int) -> TrajectorySpec:
    """Per-sequence spec with a seed derived from (data_seed, index)."""
    child = int(np.random.SeedSequence([data_seed, seq_index]).generate_state(1)[0])
    return TrajectorySpec(
        seed=child,
        duration_s=base.duration_s,
        image_rate_hz=base.image_rate_hz,
        imu_rate_hz=base.imu_rate_hz,
        velocity_mps=base.velocity_mps,
        yaw_rate_rps=base.yaw_rate_rps,
        texture_seed=base.texture_seed,
        noise_sigma_gyro=base.noise_sigma_gyro,
        noise_sigma_accel=base.noise_sigma_accel,
    )


def generate_dataset(base: TrajectorySpec, n_sequences: int, image_size: int,
                     data_seed: int = 0):
    """All sequences for one dataset, deterministic in every argument."""
    if n_sequences < 1:
        raise ConfigError(f"n_sequences must be >= 1, got {n_sequences}")
    return [
        generate_sequence(spec_for_sequence(base, data_seed, i), i, image_size)
        for i in range(n_sequences)
    ]
