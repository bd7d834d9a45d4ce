"""Full odometry model: encoders -> token fusion -> pose head.

One forward pass maps a stacked frame pair plus its IMU window to a
6-vector relative pose (tx, ty, tz, roll, pitch, yaw). A sequence forward
maps the n-1 adjacent pairs of an n-frame window to an (n-1, 6) tensor.

Construction order (visual, inertial, fusion, head) is fixed so a given
seed always produces the same initial weights regardless of caller.
"""

from __future__ import annotations

import numpy as np

from . import fusion as fusion_mod
from . import nn
from . import tensor as T
from .config import Config
from .encoders import LstmInertialEncoder, VisualEncoder, WavenetInertialEncoder
from .errors import ConfigError, ShapeError
from .tensor import Tensor

# Sub-streams of the model seed; keeps init draws independent of each other.
_INIT_STREAM = 0


class VioModel(nn.Module):
    """Assembled network; blocks are addressable by name prefix."""

    def __init__(self, config: Config, seed: int):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM]))
        self.visual = VisualEncoder(rng, feature_dim=config.visual_dim)
        if config.use_wavenet:
            self.inertial = WavenetInertialEncoder(
                rng,
                feature_dim=config.inertial_dim,
                channels=config.wavenet_channels,
                skip_channels=config.wavenet_channels,
                n_layers=config.wavenet_layers,
                kernel_size=config.kernel_size,
            )
        else:
            self.inertial = LstmInertialEncoder(rng, feature_dim=config.inertial_dim)
        self.fusion = fusion_mod.build_fusion(
            config.fusion_mode,
            config.token_width,
            rng,
            n_slots=config.memory_slots,
            scale=config.attention_scale,
            norm=config.memory_norm,
            target=config.memory_target,
        )
        head_width = fusion_mod.fused_width(
            config.fusion_mode, config.n_tokens, config.token_width
        )
        self.regressor = fusion_mod.PoseRegressor(head_width, rng)
        if config.precision == "f32":
            self.astype(np.float32)

    def forward_pair(self, pair, imu) -> Tensor:
        """One frame pair + one IMU window -> 6-vector relative pose."""
        fv = self.visual(self._cast(pair))
        fi = self.inertial(self._cast(imu))
        if fv.shape != (self.config.visual_dim,):
            raise ConfigError(
                f"visual stage produced {fv.shape}, config expects ({self.config.visual_dim},)"
            )
        if fi.shape != (self.config.inertial_dim,):
            raise ConfigError(
                f"inertial stage produced {fi.shape}, config expects ({self.config.inertial_dim},)"
            )
        tokens = fusion_mod.fuse_tokens(fv, fi, n_tokens=self.config.n_tokens)
        return self.regressor(self.fusion(tokens))

    def forward_sequence(self, pairs, imus) -> Tensor:
        """(n-1, 2, H, W) pairs and (n-1, 6, L) windows -> (n-1, 6) poses."""
        pairs = np.asarray(pairs)
        imus = np.asarray(imus)
        if pairs.ndim != 4 or imus.ndim != 3 or pairs.shape[0] != imus.shape[0]:
            raise ShapeError(
                f"forward_sequence: got pairs {pairs.shape}, imu {imus.shape}"
            )
        rows = [self.forward_pair(pairs[i], imus[i]).reshape(1, 6) for i in range(pairs.shape[0])]
        return T.concat(rows, axis=0)

    def _cast(self, arr):
        dtype = np.float64 if self.config.precision == "f64" else np.float32
        return Tensor(np.asarray(arr, dtype=dtype))

    # -- accounting ------------------------------------------------------

    def block_param_counts(self):
        """Parameter totals keyed by top-level block name."""
        counts = {}
        for name, p in self.named_parameters():
            block = name.split(".", 1)[0]
            counts[block] = counts.get(block, 0) + p.size
        counts["total"] = sum(counts.values())
        return counts

    def block_macs(self):
        """Analytic multiply-accumulate counts for one pair forward."""
        cfg = self.config
        macs = {}
        side = cfg.image_size
        c_in = 2
        visual = 0
        for conv in self.visual.convs:
            side = (side + 2 * conv.padding - conv.weight.shape[2]) // conv.stride + 1
            c_out = conv.weight.shape[0]
            visual += c_out * c_in * conv.weight.shape[2] * conv.weight.shape[3] * side * side
            c_in = c_out
        visual += self.visual.head.out_features * self.visual.head.in_features
        macs["visual"] = visual

        length = cfg.imu_samples
        if cfg.use_wavenet:
            ch = cfg.wavenet_channels
            inertial = ch * 6 * length  # input 1x1 conv
            per_layer = 2 * ch * ch * cfg.kernel_size * length + 2 * ch * ch * length
            inertial += cfg.wavenet_layers * per_layer
            inertial -= ch * ch * length  # last layer has no residual 1x1
            inertial += cfg.inertial_dim * ch
        else:
            hidden = self.inertial.cell.hidden_size
            inertial = length * 4 * hidden * (6 + hidden) + cfg.inertial_dim * hidden
        macs["inertial"] = inertial

        s, d, m = cfg.n_tokens, cfg.token_width, cfg.memory_slots
        if cfg.fusion_mode == "lstm":
            macs["fusion"] = s * 4 * d * (d + d)
        else:
            fus = 3 * s * d * d  # q, k, v projections
            if cfg.fusion_mode == "ema":
                fus += 2 * (s * d * m + s * m * d)  # memory rewrite of two operands
            fus += 2 * s * s * d  # scores and weighted values
            fus += s * d * d  # output mix
            macs["fusion"] = fus

        fc1, fc2 = self.regressor.fc1, self.regressor.fc2
        macs["regressor"] = fc1.out_features * fc1.in_features + fc2.out_features * fc2.in_features
        macs["total"] = sum(macs.values())
        return macs


def build_model(config: Config, seed=None) -> VioModel:
    """Model factory; seed defaults to the config's train seed."""
    return VioModel(config, config.train_seed if seed is None else seed)


def param_report(config: Config) -> dict:
    """Per-block parameter counts and MACs, plus the fusion comparison.

    Always reports the memory-attention and LSTM fusion blocks side by
    side at the configured token width so their sizes can be compared
    directly, whatever mode is active.
    """
    model = build_model(config)
    rng = np.random.default_rng(0)
    ema_block = fusion_mod.MemoryAttentionFusion(
        config.token_width, rng, n_slots=config.memory_slots
    )
    lstm_block = fusion_mod.LstmFusion(config.token_width, rng)
    return {
        "blocks": model.block_param_counts(),
        "macs": model.block_macs(),
        "fusion_comparison": {
            "ema": ema_block.param_count(),
            "lstm": lstm_block.param_count(),
        },
        "config": config.to_mapping(),
    }
