"""Training loop, checkpoints, and the evaluate/infer drivers.

Determinism contract: the batch drawn at step k depends only on (train
seed, k), never on loop history, so resuming from a checkpoint replays
exactly the run that would have happened without the interruption. The
loss log is a CSV whose float columns are written with repr (lossless);
its wall-clock column comes from an injectable clock so reproducibility
checks can pin it while normal runs get real timings.

Checkpoints are a versioned binary: magic, a canonical JSON header
(parameter names, shapes, dtypes, optimizer step counts, config echo),
then the raw parameter and ADAM moment bytes in header order. Loading
refuses a checkpoint whose model dims or precision differ from the active
config; loading then re-saving reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
import time

import numpy as np

from . import geometry as geo
from . import nn
from . import synthetic
from . import tensor as T
from .config import Config
from .dataset import read_dataset, window_at, window_starts, write_dataset, write_kitti_poses
from .errors import CheckpointError, ConfigError, ContractError, TrainingDivergedError
from .evaluation import EvalReport, accumulate_trajectory, hpe, kitti_drift
from .model import VioModel, build_model

CKPT_MAGIC = b"VIOCKPT1"
_BATCH_STREAM = 2
CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "loss_log.csv"


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: VioModel, step: int, path):
    named = list(model.named_parameters())
    header = {
        "format_version": 1,
        "step": int(step),
        "config": model.config.to_mapping(),
        "params": [
            {"name": name, "shape": list(p.shape), "dtype": str(p.data.dtype)}
            for name, p in named
        ],
        "adam_t": {name: p.adam_t for name, p in named},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in named:
            fh.write(np.ascontiguousarray(p.data).tobytes())
            fh.write(np.ascontiguousarray(p.adam_m).tobytes())
            fh.write(np.ascontiguousarray(p.adam_v).tobytes())


def checkpoint_config(path) -> Config:
    """Config echoed in a checkpoint header, without loading parameters.

    Lets inference run from a checkpoint alone; the header is the source
    of truth for the dims the saved parameters require.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if header.get("format_version") != 1:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
        )
    return Config.from_mapping(header["config"])


def load_checkpoint(path, config: Config):
    """Rebuild the model this checkpoint was saved from; returns (model, step)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: malformed header: {exc}") from exc
        if header.get("format_version") != 1:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
            )
        stored = Config.from_mapping(header["config"])
        if stored.model_dims() != config.model_dims():
            raise CheckpointError(
                f"{path}: checkpoint dims {stored.model_dims()} do not match "
                f"active config {config.model_dims()}"
            )
        if stored.precision != config.precision:
            raise CheckpointError(
                f"{path}: checkpoint precision {stored.precision} != active {config.precision}"
            )
        model = build_model(config)
        named = dict(model.named_parameters())
        listed = [entry["name"] for entry in header["params"]]
        if sorted(listed) != sorted(named):
            raise CheckpointError(f"{path}: parameter names do not match the model")
        for entry in header["params"]:
            p = named[entry["name"]]
            shape = tuple(entry["shape"])
            if shape != p.shape:
                raise CheckpointError(
                    f"{path}: parameter {entry['name']} has shape {shape}, "
                    f"model expects {p.shape}"
                )
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * dtype.itemsize
            raw = fh.read(3 * nbytes)
            if len(raw) != 3 * nbytes:
                raise CheckpointError(f"{path}: truncated at parameter {entry['name']}")
            p.tensor.data = np.frombuffer(raw[:nbytes], dtype=dtype).reshape(shape).copy()
            p.adam_m = np.frombuffer(raw[nbytes : 2 * nbytes], dtype=dtype).reshape(shape).copy()
            p.adam_v = np.frombuffer(raw[2 * nbytes :], dtype=dtype).reshape(shape).copy()
            p.adam_t = int(header["adam_t"][entry["name"]])
    return model, int(header["step"])


# -- loss over one batch ----------------------------------------------------


def batch_loss(model: VioModel, samples, step=None):
    """Forward a batch of windows and assemble the training loss.

    Returns (total, frame_value, seq_value_or_None); the frame loss pools
    every pair of every window, the sequence term (when the multi-state
    constraint is on) pools the composed window-end poses.
    """
    cfg = model.config
    preds = []
    for sample in samples:
        preds.append(model.forward_sequence(sample.pairs, sample.imu))
    all_pred = T.concat(preds, axis=0)
    all_target = np.concatenate([s.gt_rel for s in samples], axis=0)
    frame_term = geo.frame_loss(all_pred, all_target, rot_weight=cfg.rot_weight_frame)
    seq_term = None
    if cfg.use_multistate:
        seq_targets = np.stack([s.gt_seq for s in samples])
        seq_term = geo.sequence_loss(preds, seq_targets, rot_weight=cfg.rot_weight_seq)
    total = geo.total_loss(frame_term, seq_term, step=step)
    return total, float(frame_term.data), None if seq_term is None else float(seq_term.data)


def _draw_batch(index, batch_size, seed, step):
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, _BATCH_STREAM]))
    replace = len(index) < batch_size
    picks = rng.choice(len(index), size=batch_size, replace=replace)
    return [index[i] for i in picks]


def _check_dataset_dims(config, manifest_image, manifest_imu):
    if manifest_image != config.image_size:
        raise ConfigError(
            f"dataset stage: images are {manifest_image} px, config expects {config.image_size}"
        )
    if manifest_imu != config.imu_samples:
        raise ConfigError(
            f"dataset stage: IMU windows are {manifest_imu} samples, "
            f"config expects {config.imu_samples}"
        )


def train(config: Config, data_dir, out_dir, resume=None, clock=None):
    """Run the configured number of ADAM steps; returns a summary dict.

    ``resume`` restarts from a checkpoint (step count continues). On a
    non-finite loss the run aborts; the last periodic checkpoint is left
    in place. ``clock`` is a seconds-returning callable used for the
    wall_ms column.
    """
    clock = clock or time.perf_counter
    os.makedirs(out_dir, exist_ok=True)
    records = read_dataset(data_dir)
    _check_dataset_dims(config, records[0].pairs.shape[2], records[0].imu.shape[2])
    n = config.sequence_length
    index = [
        (ri, s) for ri, rec in enumerate(records) for s in window_starts(rec, n)
    ]
    if not index:
        raise ContractError(
            f"no length-{n} window fits any of the {len(records)} sequences"
        )
    if resume is not None:
        model, start_step = load_checkpoint(resume, config)
    else:
        model, start_step = build_model(config), 0

    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    log_path = os.path.join(out_dir, LOG_NAME)
    columns = ["step", "frame_loss"]
    if config.use_multistate:
        columns.append("seq_loss")
    columns += ["total", "grad_norm", "wall_ms"]
    params = model.parameters()
    first_total = None
    last_total = None
    mode = "a" if resume is not None and os.path.exists(log_path) else "w"
    with open(log_path, mode, encoding="utf-8", newline="") as log:
        if mode == "w":
            log.write(",".join(columns) + "\n")
        for step in range(start_step, config.steps):
            t0 = clock()
            samples = [
                window_at(records[ri], s, n)
                for ri, s in _draw_batch(index, config.batch_size, config.train_seed, step)
            ]
            try:
                total, frame_value, seq_value = batch_loss(model, samples, step=step)
            except TrainingDivergedError:
                log.flush()
                raise
            T.backward(total)
            grad_norm = nn.global_grad_norm(params)
            nn.adam_step(
                params,
                lr=config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.epsilon,
            )
            wall_ms = (clock() - t0) * 1000.0
            total_value = float(total.data)
            if first_total is None:
                first_total = total_value
            last_total = total_value
            row = [str(step), repr(frame_value)]
            if config.use_multistate:
                row.append(repr(seq_value))
            row += [repr(total_value), repr(grad_norm), repr(wall_ms)]
            log.write(",".join(row) + "\n")
            if (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(model, step + 1, ckpt_path)
    save_checkpoint(model, config.steps, ckpt_path)
    return {
        "steps": config.steps,
        "initial_loss": first_total,
        "final_loss": last_total,
        "checkpoint": ckpt_path,
        "log": log_path,
    }


# -- evaluation / inference -------------------------------------------------


def synthesize(config: Config, out_dir):
    """Generate the dataset described by the [data] section of a config."""
    base = synthetic.TrajectorySpec(
        seed=config.data_seed,
        duration_s=config.duration_s,
        image_rate_hz=config.image_rate_hz,
        imu_rate_hz=config.imu_rate_hz,
        velocity_mps=config.velocity_mps,
        yaw_rate_rps=config.yaw_rate_rps,
        texture_seed=config.texture_seed,
        noise_sigma_gyro=config.noise_sigma_gyro,
        noise_sigma_accel=config.noise_sigma_accel,
    )
    records = synthetic.generate_dataset(
        base, config.n_sequences, config.image_size, data_seed=config.data_seed
    )
    write_dataset(out_dir, records)
    return {
        "out_dir": str(out_dir),
        "sequences": len(records),
        "frames_per_sequence": int(records[0].poses.shape[0]),
    }


def predict_sequence(model: VioModel, record):
    """Per-interval relative poses for a whole sequence, (n-1, 6) float64."""
    out = np.zeros((record.pairs.shape[0], 6), dtype=np.float64)
    for i in range(record.pairs.shape[0]):
        out[i] = model.forward_pair(record.pairs[i], record.imu[i]).numpy().astype(np.float64)
    return out


def evaluate(config: Config, ckpt_path, data_dir, model=None):
    """Drift and HPE of a checkpointed model over every dataset sequence."""
    if model is None:
        model, _ = load_checkpoint(ckpt_path, config)
    records = read_dataset(data_dir)
    _check_dataset_dims(config, records[0].pairs.shape[2], records[0].imu.shape[2])
    t_acc, r_acc, t_counts = {}, {}, {}
    sq_sum = 0.0
    frames = 0
    for record in records:
        pred_rel = predict_sequence(model, record)
        pred_abs = accumulate_trajectory(pred_rel, origin=record.poses[0])
        t_rel, r_rel, _, _ = kitti_drift(
            pred_abs, record.poses, stride=config.stride, scaled=config.lengths_scaled
        )
        for length, value in t_rel.items():
            t_acc[length] = t_acc.get(length, 0.0) + value
            r_acc[length] = r_acc.get(length, 0.0) + r_rel[length]
            t_counts[length] = t_counts.get(length, 0) + 1
        sq_sum += hpe(pred_abs, record.poses) ** 2 * record.poses.shape[0]
        frames += record.poses.shape[0]
    t_rel = {l: t_acc[l] / t_counts[l] for l in sorted(t_acc)}
    r_rel = {l: r_acc[l] / t_counts[l] for l in sorted(r_acc)}
    report = EvalReport(
        t_rel_percent=t_rel,
        r_rel_deg_per_100m=r_rel,
        t_rel_avg=float(np.mean(list(t_rel.values()))),
        r_rel_avg=float(np.mean(list(r_rel.values()))),
        hpe_m=float(np.sqrt(sq_sum / frames)),
        frame_count=frames,
        config=config.to_mapping(),
    )
    report.validate()
    return report


def infer(config: Config, ckpt_path, data_dir, poses_out):
    """Predict one sequence and write its accumulated KITTI pose file."""
    model, _ = load_checkpoint(ckpt_path, config)
    records = read_dataset(data_dir)
    _check_dataset_dims(config, records[0].pairs.shape[2], records[0].imu.shape[2])
    if len(records) != 1:
        raise ContractError(
            f"infer writes a single pose file but the dataset has {len(records)} "
            "sequences; point it at a single-sequence dataset"
        )
    record = records[0]
    pred_rel = predict_sequence(model, record)
    pred_abs = accumulate_trajectory(pred_rel, origin=record.poses[0])
    write_kitti_poses(poses_out, pred_abs)
    return {"poses_out": str(poses_out), "frames": int(pred_abs.shape[0])}
