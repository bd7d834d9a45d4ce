"""Sensor fusion over visual + inertial feature tokens, plus the pose head.

The two encoder features are concatenated and folded into a small grid of
tokens. Three interchangeable fusion blocks operate on that grid:

  * memory attention: tokens are projected to queries/keys/values; the
    queries and keys are then re-expressed as mixtures of small learned
    dataset-level memory matrices before the attention product. The memory
    scores go through a double normalization, softmax across memory slots
    then L1 across tokens, so each memory slot distributes exactly unit
    mass over the tokens. A plain-softmax variant and a variant that
    rewrites values instead of queries/keys are kept behind flags for
    experiments.
  * self attention: softmax(Q K^T) V on the projected tokens with a
    learned output mix and a residual. With the output mix zeroed, both
    attention blocks reduce exactly to the identity, which makes ablation
    deltas attributable.
  * lstm: tokens consumed as a sequence, final hidden state emitted (the
    pose head adapts its input width to this mode).
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

FUSION_MODES = ("ema", "self_attention", "lstm")


def fuse_tokens(visual: Tensor, inertial: Tensor, n_tokens=4) -> Tensor:
    """Concatenate the two features and fold into (n_tokens, width)."""
    if visual.ndim != 1 or inertial.ndim != 1:
        raise ShapeError(
            f"fuse_tokens: expected rank-1 features, got {visual.shape} and {inertial.shape}"
        )
    total = visual.shape[0] + inertial.shape[0]
    if total % n_tokens != 0:
        raise ConfigError(
            f"fuse_tokens: combined width {total} not divisible by {n_tokens} tokens"
        )
    return T.concat([visual, inertial], axis=0).reshape(n_tokens, total // n_tokens)


def attention_weights(q: Tensor, k: Tensor, scale=False) -> Tensor:
    """softmax(q k^T [/ sqrt(d)]) over the key axis; rows sum to one."""
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: incompatible shapes {q.shape} and {k.shape}")
    scores = T.matmul(q, k.transpose())
    if scale:
        scores = scores * (1.0 / np.sqrt(q.shape[1]))
    return T.softmax(scores, axis=1)


def double_normalize(scores: Tensor) -> Tensor:
    """Softmax across the memory axis, then L1 across the token axis.

    Input is (tokens, slots). After the softmax every row sums to one;
    after the column normalization every column sums to one. With a single
    memory slot this degenerates to a constant 1/tokens matrix.
    """
    if scores.ndim != 2:
        raise ShapeError(f"double_normalize: expected rank-2 scores, got {scores.shape}")
    soft = T.softmax(scores, axis=1)
    col_sums = soft.sum(axis=0, keepdims=True)
    return soft / col_sums


class _QkvProjections(nn.Module):
    """Shared query/key/value projections used by both attention blocks."""

    def __init__(self, width, rng):
        super().__init__()
        self.w_q = nn.Parameter(nn.uniform_init(rng, (width, width), width))
        self.w_k = nn.Parameter(nn.uniform_init(rng, (width, width), width))
        self.w_v = nn.Parameter(nn.uniform_init(rng, (width, width), width))

    def __call__(self, tokens: Tensor):
        q = T.matmul(tokens, self.w_q.tensor.transpose())
        k = T.matmul(tokens, self.w_k.tensor.transpose())
        v = T.matmul(tokens, self.w_v.tensor.transpose())
        return q, k, v


class SelfAttentionFusion(nn.Module):
    """Residual self-attention over the token grid."""

    def __init__(self, width, rng, scale=False):
        super().__init__()
        self.scale = scale
        self.qkv = _QkvProjections(width, rng)
        self.out_mix = nn.Parameter(nn.uniform_init(rng, (width, width), width))

    def _attend(self, tokens: Tensor):
        q, k, v = self.qkv(tokens)
        return attention_weights(q, k, scale=self.scale), v

    def __call__(self, tokens: Tensor) -> Tensor:
        attn, v = self._attend(tokens)
        mixed = T.matmul(T.matmul(attn, v), self.out_mix.tensor.transpose())
        return mixed + tokens

    def attention_map(self, tokens: Tensor) -> np.ndarray:
        return self._attend(tokens)[0].numpy()


class MemoryAttentionFusion(nn.Module):
    """Residual attention with learned external memory re-expression.

    ``norm`` selects the memory-score normalization: "double" (softmax over
    slots then L1 over tokens) or "softmax". ``target`` selects which
    operands get rewritten through the memories: "qk" (default) or "v".
    """

    def __init__(self, width, rng, n_slots=32, scale=False, norm="double", target="qk"):
        super().__init__()
        if n_slots < 1:
            raise ConfigError(f"memory fusion: n_slots must be >= 1, got {n_slots}")
        if norm not in ("double", "softmax"):
            raise ConfigError(f"memory fusion: unknown norm {norm!r}")
        if target not in ("qk", "v"):
            raise ConfigError(f"memory fusion: unknown target {target!r}")
        self.scale = scale
        self.norm = norm
        self.target = target
        self.qkv = _QkvProjections(width, rng)
        self.mem_q_in = nn.Parameter(nn.uniform_init(rng, (n_slots, width), width))
        self.mem_q_out = nn.Parameter(nn.uniform_init(rng, (n_slots, width), n_slots))
        self.mem_k_in = nn.Parameter(nn.uniform_init(rng, (n_slots, width), width))
        self.mem_k_out = nn.Parameter(nn.uniform_init(rng, (n_slots, width), n_slots))
        self.out_mix = nn.Parameter(nn.uniform_init(rng, (width, width), width))

    def rewrite(self, x: Tensor, mem_in: nn.Parameter, mem_out: nn.Parameter) -> Tensor:
        scores = T.matmul(x, mem_in.tensor.transpose())
        if self.norm == "double":
            weights = double_normalize(scores)
        else:
            weights = T.softmax(scores, axis=1)
        return T.matmul(weights, mem_out.tensor)

    def _attend(self, tokens: Tensor):
        q, k, v = self.qkv(tokens)
        if self.target == "qk":
            q = self.rewrite(q, self.mem_q_in, self.mem_q_out)
            k = self.rewrite(k, self.mem_k_in, self.mem_k_out)
        else:
            v = self.rewrite(v, self.mem_q_in, self.mem_q_out)
        return attention_weights(q, k, scale=self.scale), v

    def __call__(self, tokens: Tensor) -> Tensor:
        attn, v = self._attend(tokens)
        mixed = T.matmul(T.matmul(attn, v), self.out_mix.tensor.transpose())
        return mixed + tokens

    def attention_map(self, tokens: Tensor) -> np.ndarray:
        return self._attend(tokens)[0].numpy()


class LstmFusion(nn.Module):
    """Ablation block: tokens fed through an LSTM, final hidden state out."""

    def __init__(self, width, rng):
        super().__init__()
        self.width = width
        self.cell = nn.LstmCell(width, width, rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        h, c = self.cell.initial_state(dtype=tokens.dtype)
        for i in range(tokens.shape[0]):
            h, c = self.cell(tokens[i], h, c)
        return h


class PoseRegressor(nn.Module):
    """Two linear layers with a relu between; emits the 6-vector pose."""

    def __init__(self, in_width, rng, hidden=128):
        super().__init__()
        self.in_width = in_width
        self.fc1 = nn.Linear(in_width, hidden, rng)
        self.fc2 = nn.Linear(hidden, 6, rng)

    def __call__(self, fused: Tensor) -> Tensor:
        if fused.ndim == 2:
            fused = fused.reshape(fused.shape[0] * fused.shape[1])
        if fused.shape[0] != self.in_width:
            raise ShapeError(
                f"pose regressor: fused width {fused.shape[0]} != expected {self.in_width}"
            )
        return self.fc2(self.fc1(fused).relu())


def build_fusion(mode, width, rng, n_slots=32, scale=False, norm="double", target="qk"):
    """Fusion block factory; ``fused_width`` below gives the head input."""
    if mode == "ema":
        return MemoryAttentionFusion(width, rng, n_slots=n_slots, scale=scale,
                                     norm=norm, target=target)
    if mode == "self_attention":
        return SelfAttentionFusion(width, rng, scale=scale)
    if mode == "lstm":
        return LstmFusion(width, rng)
    raise ConfigError(f"unknown fusion mode {mode!r}, expected one of {FUSION_MODES}")


def fused_width(mode, n_tokens, width):
    """Width of the fusion output as seen by the pose head."""
    if mode == "lstm":
        return width
    return n_tokens * width
