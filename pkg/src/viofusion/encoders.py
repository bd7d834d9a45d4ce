"""Feature encoders for the two sensor streams.

The visual branch is a small strided conv stack over a stacked grayscale
frame pair, global-average-pooled and projected to a fixed-width feature.
The inertial branch is a stack of gated, dilated causal 1-D convolutions
over a raw IMU window (angular rate + specific force channels); because
every conv is causal, the activation at sample t never depends on samples
after t, which the tests exercise directly. An LSTM variant of the
inertial branch is kept for ablations.
"""

from __future__ import annotations

from . import nn
from .errors import ConfigError, ShapeError
from .tensor import Tensor

VISUAL_CHANNELS = (8, 16, 32, 64, 64, 128)


MIN_IMAGE_SIDE = 32


class VisualEncoder(nn.Module):
    """Six stride-2 conv layers, average pool, linear head.

    Input is a (2, H, W) array: two consecutive grayscale frames stacked on
    the channel axis. Output is a (feature_dim,) tensor.
    """

    def __init__(self, rng, feature_dim=128, channels=VISUAL_CHANNELS):
        super().__init__()
        self.feature_dim = feature_dim
        layers = []
        c_in = 2
        for c_out in channels:
            layers.append(nn.Conv2d(c_in, c_out, 3, rng, stride=2, padding=1))
            c_in = c_out
        self.convs = layers
        self.head = nn.Linear(c_in, feature_dim, rng)

    def __call__(self, pair) -> Tensor:
        x = pair if isinstance(pair, Tensor) else Tensor(pair)
        if x.ndim != 3 or x.shape[0] != 2:
            raise ShapeError(f"visual encoder: expected (2, H, W) frame pair, got {x.shape}")
        if min(x.shape[1], x.shape[2]) < MIN_IMAGE_SIDE:
            raise ConfigError(
                f"visual encoder: image sides must be >= {MIN_IMAGE_SIDE}, got {x.shape[1:]}"
            )
        for conv in self.convs:
            x = conv(x).relu()
        pooled = x.mean(axis=(1, 2))
        return self.head(pooled)


class WavenetLayer(nn.Module):
    """One gated residual block: filter/gate convs, residual and skip 1x1.

    ``residual=False`` omits the residual projection entirely; the stack's
    final layer uses it because nothing consumes that layer's residual
    output and the optimizer treats a parameter that can never receive a
    gradient as a bug.
    """

    def __init__(self, channels, skip_channels, kernel_size, dilation, rng,
                 residual=True):
        super().__init__()
        self.filter_conv = nn.Conv1dCausal(channels, channels, kernel_size, rng, dilation=dilation)
        self.gate_conv = nn.Conv1dCausal(channels, channels, kernel_size, rng, dilation=dilation)
        self.residual_proj = (
            nn.Conv1dCausal(channels, channels, 1, rng) if residual else None
        )
        self.skip_proj = nn.Conv1dCausal(channels, skip_channels, 1, rng)

    def __call__(self, x: Tensor):
        z = nn.gated_activation(self.filter_conv(x), self.gate_conv(x))
        skip = self.skip_proj(z)
        if self.residual_proj is None:
            return x, skip
        return x + self.residual_proj(z), skip


class WavenetInertialEncoder(nn.Module):
    """Gated dilated causal conv stack over a (6, L) IMU window.

    Channel order is (gyro_x, gyro_y, gyro_z, acc_x, acc_y, acc_z).
    Dilation doubles per layer, so the receptive field of the last sample
    covers 1 + sum((K-1) * 2^i) samples. The per-layer skip outputs are
    summed, relu'd, mean-pooled over time, and projected to the output
    feature. ``prepool`` exposes the relu'd skip sum before pooling; the
    causality tests perturb the window tail and compare those columns.
    """

    def __init__(self, rng, feature_dim=128, channels=64, skip_channels=64,
                 n_layers=4, kernel_size=2):
        super().__init__()
        if n_layers < 1:
            raise ConfigError(f"inertial encoder: n_layers must be >= 1, got {n_layers}")
        self.feature_dim = feature_dim
        self.in_proj = nn.Conv1dCausal(6, channels, 1, rng)
        self.layers = [
            WavenetLayer(channels, skip_channels, kernel_size, 2 ** i, rng,
                         residual=i < n_layers - 1)
            for i in range(n_layers)
        ]
        self.head = nn.Linear(skip_channels, feature_dim, rng)

    def receptive_field(self):
        field = 1
        for layer in self.layers:
            k = layer.filter_conv.weight.shape[2]
            field += (k - 1) * layer.filter_conv.dilation
        return field

    def prepool(self, window) -> Tensor:
        """Activations before time pooling, shape (skip_channels, L)."""
        x = window if isinstance(window, Tensor) else Tensor(window)
        if x.ndim != 2 or x.shape[0] != 6:
            raise ShapeError(f"inertial encoder: expected (6, L) window, got {x.shape}")
        x = self.in_proj(x)
        skip_sum = None
        for layer in self.layers:
            x, skip = layer(x)
            skip_sum = skip if skip_sum is None else skip_sum + skip
        return skip_sum.relu()

    def __call__(self, window) -> Tensor:
        return self.head(self.prepool(window).mean(axis=1))


class LstmInertialEncoder(nn.Module):
    """Ablation branch: a plain LSTM over the IMU window, last hidden state."""

    def __init__(self, rng, feature_dim=128, hidden_size=128):
        super().__init__()
        self.feature_dim = feature_dim
        self.cell = nn.LstmCell(6, hidden_size, rng)
        self.head = nn.Linear(hidden_size, feature_dim, rng)

    def __call__(self, window) -> Tensor:
        x = window if isinstance(window, Tensor) else Tensor(window)
        if x.ndim != 2 or x.shape[0] != 6:
            raise ShapeError(f"inertial encoder: expected (6, L) window, got {x.shape}")
        h, c = self.cell.initial_state(dtype=x.dtype)
        for t in range(x.shape[1]):
            h, c = self.cell(x[:, t], h, c)
        return self.head(h)
